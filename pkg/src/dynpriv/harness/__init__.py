"""Experiment harness: JSON experiment definitions, trial runs, artifacts and reproductions."""
