"""Model core: parameters, steady state and linearized matrices."""
