"""Configuration and atomic file output."""
