"""Epidemic routing in sparse mobile networks: simulation, estimation and mean-field models."""
