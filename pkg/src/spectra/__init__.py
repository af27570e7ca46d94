"""Spectra: transfer rows, power spectral densities, phonon quadrature and peak areas."""
