"""SO(3) primitives: spin/axial maps, exponential map, rotor composition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8


def spin(v) -> np.ndarray:
    """Antisymmetric matrix W with W y = v x y for every y."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axial(W) -> np.ndarray:
    """Inverse of `spin` for antisymmetric matrices."""
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def exp_map(phi) -> np.ndarray:
    """Rotation matrix Exp(Spin[phi]) via the Rodrigues closed form.

    Below the small-angle threshold the series limits (1, 1/2) of the two
    coefficients are used to avoid 0/0.
    """
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    W = spin(phi)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + a * W + b * (W @ W)


def polar_orthonormalize(R) -> np.ndarray:
    """Nearest proper-orthogonal matrix (polar factor) of R."""
    u, _, vt = np.linalg.svd(R)
    Q = u @ vt
    if np.linalg.det(Q) < 0.0:
        u[:, -1] *= -1.0
        Q = u @ vt
    return Q


def rotation_distance(Ra, Rb) -> float:
    """Axial distance |Log(Ra Rb^T)| between two rotations.

    Computed from the Frobenius distance (|Ra - Rb|_F = 2 sqrt(2) |sin(a/2)|),
    which stays fully accurate for tiny angles where arccos of the trace
    loses half the digits.
    """
    s = np.clip(np.linalg.norm(Ra - Rb) / (2.0 * np.sqrt(2.0)), -1.0, 1.0)
    return float(2.0 * np.arcsin(s))


@dataclass
class Rotor:
    """Per-element proper-orthogonal operator plus centroid translation."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    c: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "Rotor":
        return Rotor(self.R.copy(), self.c.copy())

    def orthogonality_defect(self) -> float:
        return float(np.abs(self.R @ self.R.T - np.eye(3)).max())


def compose(rotor: Rotor, dphi) -> Rotor:
    """Left-compose an incremental rotation: Exp(dphi) R, re-orthonormalized."""
    return Rotor(polar_orthonormalize(exp_map(dphi) @ rotor.R), rotor.c.copy())
