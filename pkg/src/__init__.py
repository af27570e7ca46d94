"""
Coherent feedback cooling simulator for a membrane-in-the-middle cavity.

This package models dynamical backaction cooling and coherent feedback cooling
of a mechanical mode with linearized quantum Langevin equations, predicts the
phonon occupation and homodyne spectra, checks stability of the delayed loop,
runs parameter sweeps and fits measured spectra.
"""
