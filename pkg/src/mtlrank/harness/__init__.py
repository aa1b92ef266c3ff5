"""Experiment harness: synthetic logs, runs, ablations and the command line."""
