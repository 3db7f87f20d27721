"""Differentiable MFCC front end."""
