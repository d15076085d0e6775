"""Configuration, persistence, evaluation and training drivers, and the CLI."""
