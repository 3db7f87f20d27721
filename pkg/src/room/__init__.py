"""Room impulse responses and the over-the-air channel."""
