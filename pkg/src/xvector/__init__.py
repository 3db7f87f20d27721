"""X-vector style speaker model, training and checkpoints."""
