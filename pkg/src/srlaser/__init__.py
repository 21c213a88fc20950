"""Superradiant rare-earth laser simulation: mean field, spectra, Dicke master equation."""
