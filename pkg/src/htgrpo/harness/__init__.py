"""Configuration, metrics persistence, proposition checks and the CLI."""
