"""Attack evaluation: metrics, reports, sweeps, timing and check suites."""
