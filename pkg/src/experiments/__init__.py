"""Experiment harness: scene specs, commands, sweeps and reports."""
