"""Eavesdropper attacks on consensus dynamics.

Global reconstruction from full trajectories, passive and active local
identification of the closed loop, and recovery of the equation from an
identified realization.
"""
