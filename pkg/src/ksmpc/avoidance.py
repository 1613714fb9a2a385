"""Linearised separation constraints.

A safety sphere of radius ``R_a + R_b + delta`` around a predicted obstacle
(or neighbour) is outer-approximated by planes tangent to it. At a nominal UAV
position the plane with the largest signed distance is kept, giving one
half-space ``eta^T (p - ref) >= d`` per pair and time step. With unit normals
and ``d`` equal to the radius, satisfying that half-space implies
``||p - ref|| >= radius``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MIN_FACETS = 6
DEFAULT_FACETS = 26
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class SafetySphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("safety radius must be positive")


def safety_sphere(center, r_a: float, r_b: float, delta: float = 0.0) -> SafetySphere:
    return SafetySphere(np.asarray(center, dtype=float), r_a + r_b + delta)


@dataclass(frozen=True)
class FacetSet:
    normals: np.ndarray  # (gamma, 3), unit rows
    offsets: np.ndarray  # (gamma,)

    def __len__(self):
        return len(self.offsets)


@dataclass(frozen=True)
class LinearConstraint:
    """Half-space ``normal^T (p - reference) >= offset`` at step ``t``."""

    normal: np.ndarray
    offset: float
    reference: np.ndarray
    t: int = 0
    facet: int = 0

    def margin(self, p) -> float:
        return float(self.normal @ (np.asarray(p, dtype=float) - self.reference)) - self.offset

    def satisfied(self, p) -> bool:
        return self.margin(p) >= 0.0


@lru_cache(maxsize=64)
def _normals_cached(gamma: int, axis_aligned: bool, planar: bool) -> np.ndarray:
    if axis_aligned:
        if gamma != 6:
            raise ValueError("the axis-aligned set has exactly 6 facets")
        n = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    elif planar:
        # half-step offset keeps facets off the coordinate axes
        a = (np.arange(gamma) + 0.5) * (2.0 * math.pi / gamma)
        n = np.column_stack([np.cos(a), np.sin(a), np.zeros(gamma)])
    else:
        i = np.arange(gamma)
        z = 1.0 - (2.0 * i + 1.0) / gamma
        r = np.sqrt(1.0 - z * z)
        a = i * GOLDEN_ANGLE
        n = np.column_stack([r * np.cos(a), r * np.sin(a), z])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    n.setflags(write=False)
    return n


def facet_normals(gamma: int = DEFAULT_FACETS, axis_aligned: bool = False,
                  planar: bool = False) -> np.ndarray:
    """Deterministic unit normals covering the sphere (or the horizontal circle).

    The default is a Fibonacci spiral lattice. ``planar=True`` spreads the
    normals evenly around the z axis, for scenes where motion stays horizontal.
    """
    if int(gamma) != gamma or gamma < MIN_FACETS:
        raise ValueError(f"need at least {MIN_FACETS} facets, got {gamma}")
    return _normals_cached(int(gamma), bool(axis_aligned), bool(planar))


def tangent_facets(radius: float, normals: np.ndarray) -> FacetSet:
    """Planes tangent to a ball of ``radius``: every offset equals the radius."""
    return FacetSet(normals, np.full(len(normals), float(radius)))


def covering_half_angle(normals: np.ndarray, samples: int = 20000, planar: bool = False) -> float:
    """Largest angle from a direction to its nearest normal, estimated on a dense lattice."""
    if planar:
        a = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
        probe = np.column_stack([np.cos(a), np.sin(a), np.zeros(samples)])
    else:
        probe = _normals_cached(samples, False, False)
    best = np.max(probe @ np.asarray(normals).T, axis=1)
    return float(np.arccos(np.clip(best.min(), -1.0, 1.0)))


def signed_distances(p, o, facets: FacetSet) -> np.ndarray:
    """``rho_mu = eta_mu^T (p - o) - d_mu`` for every facet."""
    diff = np.asarray(p, dtype=float) - np.asarray(o, dtype=float)
    return facets.normals @ diff - facets.offsets


def select_facet(rho) -> int:
    """Index of the largest signed distance; the lowest index wins ties."""
    rho = np.asarray(rho, dtype=float).ravel()
    if rho.size == 0:
        raise ValueError("no facets to select from")
    return int(np.argmax(rho))


def _build(p_nominal, sphere: SafetySphere, normals, t: int) -> LinearConstraint:
    facets = tangent_facets(sphere.radius, normals)
    mu = select_facet(signed_distances(p_nominal, sphere.center, facets))
    return LinearConstraint(facets.normals[mu].copy(), float(facets.offsets[mu]),
                            np.asarray(sphere.center, dtype=float), t, mu)


def build_obstacle_constraint(p_nominal, sphere: SafetySphere, gamma: int = DEFAULT_FACETS,
                              normals=None, t: int = 0) -> LinearConstraint:
    """Most restrictive tangent plane of the obstacle's safety sphere at ``p_nominal``.

    ``sphere.center`` is the predicted obstacle position.
    """
    if normals is None:
        normals = facet_normals(gamma)
    return _build(p_nominal, sphere, normals, t)


def build_agent_constraint(p_nominal, sphere: SafetySphere, gamma: int = DEFAULT_FACETS,
                           normals=None, t: int = 0) -> LinearConstraint:
    """Same construction with a neighbour's predicted position as the sphere center."""
    if normals is None:
        normals = facet_normals(gamma)
    return _build(p_nominal, sphere, normals, t)
