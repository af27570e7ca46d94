"""Stability of the delayed feedback loop: contour counts, loop-gain bound and time-domain check."""
