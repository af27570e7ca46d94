"""Staged spectral fits and error propagation."""
