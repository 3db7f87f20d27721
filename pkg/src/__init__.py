"""Universal targeted adversarial perturbations for speaker recognition."""

__version__ = "1.0.0"
