"""Quadrature rules on the reference triangle and tetrahedron.

Rules are built from tensorized Gauss-Legendre points pushed through a
collapsed-coordinate (Duffy) map.  They have strictly positive weights,
are exact for all polynomials up to the requested degree, and are
bit-reproducible for a given degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Points (parametric coordinates) and positive weights on a reference domain."""

    points: np.ndarray  # (nq, dim)
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_rule(degree: int) -> QuadratureRule:
    """Rule exact for polynomials of total degree <= `degree` on {x,y>=0, x+y<=1}."""
    degree = max(degree, 1)
    # Duffy map x=u, y=v(1-u) raises the u-degree by one.
    n = (degree + 3) // 2
    u, wu = _gauss01(n)
    v, wv = _gauss01(n)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = uu.ravel()
    y = (vv * (1.0 - uu)).ravel()
    w = (np.outer(wu, wv) * (1.0 - uu)).ravel()
    return QuadratureRule(np.column_stack([x, y]), w, degree)


def tetrahedron_rule(degree: int) -> QuadratureRule:
    """Rule exact for polynomials of total degree <= `degree` on the unit tet."""
    degree = max(degree, 1)
    # Collapsed map raises the u-degree by two and the v-degree by one.
    n = (degree + 4) // 2
    u, wu = _gauss01(n)
    v, wv = _gauss01(n)
    t, wt = _gauss01(n)
    uu, vv, tt = np.meshgrid(u, v, t, indexing="ij")
    x = uu.ravel()
    y = (vv * (1.0 - uu)).ravel()
    z = (tt * (1.0 - uu) * (1.0 - vv)).ravel()
    w = (
        wu[:, None, None] * wv[None, :, None] * wt[None, None, :]
        * (1.0 - uu) ** 2 * (1.0 - vv)
    ).ravel()
    return QuadratureRule(np.column_stack([x, y, z]), w, degree)


def triangle_monomial_moment(a: int, b: int) -> float:
    """Closed-form integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def tetrahedron_monomial_moment(a: int, b: int, c: int) -> float:
    """Closed-form integral of x^a y^b z^c over the reference tetrahedron."""
    return (
        math.factorial(a) * math.factorial(b) * math.factorial(c)
        / math.factorial(a + b + c + 3)
    )
