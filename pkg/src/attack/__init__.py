"""Universal and per-utterance targeted perturbations."""
