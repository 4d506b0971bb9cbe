"""Small-gain analysis for nonlinear systems with outputs."""
