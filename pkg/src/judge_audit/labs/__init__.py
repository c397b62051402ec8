"""Simulation and routing experiments built on the core metrics."""
