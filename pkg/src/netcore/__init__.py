"""Network layers with explicit backward passes, optimizer and gradient checks."""
