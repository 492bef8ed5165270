"""Quadrotor NMPC flight stack with system identification, estimation and simulation."""
