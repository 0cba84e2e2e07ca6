"""Embedded problem instances for the reproducible examples.

All three share the 4-node star centered at node 0 and the same weight
matrix. Node indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lae import Ball, LinearEquation
from .netcore import Graph, WeightMatrix, build_graph

STAR_EDGES = [(0, 1), (0, 2), (0, 3)]

STAR_WEIGHTS = [
    [0.1, 0.3, 0.2, 0.4],
    [0.3, 0.7, 0.0, 0.0],
    [0.2, 0.0, 0.8, 0.0],
    [0.4, 0.0, 0.0, 0.6],
]

RECONSTRUCTION_H = [[3.0, -1.0], [1.5, 0.8], [-2.0, 1.5], [-1.2, 4.0]]
RECONSTRUCTION_Z = [5.0, -0.1, -5.0, -9.2]
RECONSTRUCTION_SOLUTION = (1.0, -2.0)

IDENTIFICATION_H = [[71.5, -65.5], [-95.0, 47.1], [-35.5, 100.0], [86.5, -69.0]]
IDENTIFICATION_Z = [-202.5, 189.2, 235.5, -224.5]
IDENTIFICATION_SOLUTION = (-1.0, 2.0)
IDENTIFICATION_OBSERVER = 1

STEP_SIZE = 0.1

# Reference realization for the identification example, rounded to 2 decimals.
REFERENCE_A_STAR = [
    [0.86, 1.09, -0.87, -0.73, 0.47, 0.05, 0.61, -0.87],
    [0.61, 0.59, -0.47, -0.16, -0.36, -0.70, -0.61, 0.20],
    [0.78, 1.10, -0.94, -1.06, 0.06, -0.65, 0.15, -0.75],
    [1.03, 0.64, -1.12, 0.27, -0.28, -0.85, -0.68, 0.09],
    [-0.73, -1.37, 1.72, 1.18, 0.30, 0.38, -0.53, 1.19],
    [-1.22, -0.78, 1.40, 0.84, 0.47, 2.10, 0.92, -0.01],
    [2.03, 1.60, -2.97, -1.82, -0.33, -1.94, 0.03, -0.96],
    [0.36, 0.19, -0.35, -0.21, -0.12, -0.39, -0.30, 0.80],
]

REFERENCE_C_STAR = [
    [-60.68, 83.44, 6.16, -67.56, 37.84, 7.67, 63.46, -63.63],
    [-49.78, -42.83, 55.83, 58.86, 49.63, 99.23, 73.74, -47.24],
    [23.21, 51.44, 86.80, -37.76, -9.89, -84.36, -83.11, -70.89],
    [-5.34, 50.75, -74.02, 5.71, -83.24, -11.46, -20.04, -72.79],
]

PRIVACY_LEVELS = (2.0, 4.0, 6.0, 8.0)


@dataclass(frozen=True, eq=False)
class StarInstance:
    graph: Graph
    weights: WeightMatrix
    equation: LinearEquation
    alpha: float
    solution: np.ndarray


def star_graph() -> Graph:
    return build_graph(4, STAR_EDGES)


def star_weights() -> WeightMatrix:
    return WeightMatrix(np.array(STAR_WEIGHTS))


def reconstruction_instance() -> StarInstance:
    """Global reconstruction setup with solution (1, -2)."""
    return StarInstance(
        graph=star_graph(),
        weights=star_weights(),
        equation=LinearEquation(np.array(RECONSTRUCTION_H), np.array(RECONSTRUCTION_Z)),
        alpha=STEP_SIZE,
        solution=np.array(RECONSTRUCTION_SOLUTION),
    )


def identification_instance() -> StarInstance:
    """Local eavesdropper setup with solution (-1, 2)."""
    return StarInstance(
        graph=star_graph(),
        weights=star_weights(),
        equation=LinearEquation(np.array(IDENTIFICATION_H), np.array(IDENTIFICATION_Z)),
        alpha=STEP_SIZE,
        solution=np.array(IDENTIFICATION_SOLUTION),
    )


def privacy_region() -> Ball:
    """Unit ball around the reconstruction solution."""
    return Ball(np.array(RECONSTRUCTION_SOLUTION), 1.0)
