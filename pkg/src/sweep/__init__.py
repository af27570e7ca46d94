"""Parameter sweeps, scans and phonon-number minimization."""
