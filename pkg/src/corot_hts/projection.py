"""L2 projection of displacement fields onto face monomial bases."""

from __future__ import annotations

import numpy as np

from .quadrature import triangle_rule
from .trefftz import FaceBasis


def project_face_field(mesh, face: int, basis: FaceBasis, fn, extra_degree: int = 4):
    """Project a displacement field X -> u(X) onto one face's basis.

    `fn` maps an (nq, 3) array of physical points to (nq, 3) displacements.
    Exact for fields polynomial of degree <= basis.order in the face-plane
    coordinates; smooth fields are matched in the least-squares sense.
    """
    rule = triangle_rule(2 * basis.order + extra_degree)
    local, xyz = mesh.face_local_coords(face, rule.points)
    U = basis.eval(local)  # (nq, 3, n)
    w = rule.weights
    gram = np.einsum("q,qci,qcj->ij", w, U, U)
    rhs = np.einsum("q,qci,qc->i", w, U, np.asarray(fn(xyz), dtype=float))
    return np.linalg.solve(gram, rhs)


def project_tet_field(mesh, tet: int, basis: FaceBasis, fn, extra_degree: int = 4):
    """Stacked per-face projections for all four faces of a tet."""
    return np.concatenate(
        [
            project_face_field(mesh, fi, basis, fn, extra_degree)
            for fi in mesh.tet_faces[tet]
        ]
    )
