"""Audio I/O and the synthetic speaker corpus."""
