"""Configuration, data, synthetic corpora, experiment recipes and the CLI."""
