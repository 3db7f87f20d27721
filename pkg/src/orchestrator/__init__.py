"""Pipeline orchestration for the command-line stages."""
