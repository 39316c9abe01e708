"""Per-element co-rotational machinery on hybrid Trefftz stress tets.

Each element carries an equilibrium-exact stress basis (k modes) in a local
frame centered at its reference boundary centroid and scaled by its
circumscribed radius, plus face displacement DOFs shared with its
neighbours.  This module assembles the boundary-integral blocks coupling
the two fields, the rigid-motion projector built from the Spin-Liver and
Spin-Filter, the residuals, the consistent tangent, and their statically
condensed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .bestfit import BestFitWorkspace, build_workspace, rotor_sensitivity
from .errors import SingularF, SingularNormalMatrix
from .quadrature import triangle_rule
from .so3 import Rotor, spin
from .trefftz import (
    FaceBasis,
    TrefftzBasis,
    eval_monomials_2d,
    eval_monomials_3d,
    traction_matrix,
)

# Spin[u]_{bc} = -eps[b,c,m] u_m
_EPS = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPS[_i, _j, _k] = 1.0
    _EPS[_k, _j, _i] = -1.0


@dataclass
class BoundaryData:
    """Prescribed tractions and displacements, resolved to face indices.

    Traction entries map a face to t(X, lam) -> (nq, 3); displacement entries
    map a face to (u(X, lam) -> (nq, 3), component_mask).  A face may not
    carry both kinds of data on the same component.
    """

    traction_faces: dict
    displacement_faces: dict

    @classmethod
    def from_sets(cls, mesh, tractions=None, displacements=None):
        tf, df = {}, {}
        for name, fn in (tractions or {}).items():
            for fi in mesh.boundary_sets[name]:
                tf[int(fi)] = fn
        for name, (fn, mask) in (displacements or {}).items():
            for fi in mesh.boundary_sets[name]:
                df[int(fi)] = (fn, np.asarray(mask, dtype=bool))
        for fi, (fn, mask) in df.items():
            if fi in tf and mask.any():
                raise ValueError(f"face {fi} has both traction and displacement data")
        return cls(traction_faces=tf, displacement_faces=df)


class ElementCache:
    """Configuration-independent per-element data.

    Holds the best-fit workspace, the local stress frame, per-face quadrature
    geometry and monomial values, and the (constant) flexibility block F with
    its Cholesky factorization.
    """

    def __init__(self, mesh, tet: int, trefftz: TrefftzBasis, face_basis: FaceBasis):
        self.mesh = mesh
        self.tet = tet
        self.trefftz = trefftz
        self.face_basis = face_basis
        self.ws: BestFitWorkspace = build_workspace(mesh, tet, face_basis)
        self.centroid = self.ws.centroid_ref
        self.radius = self.ws.char_radius
        self.k = trefftz.n_modes
        self.m = face_basis.n_columns
        self.n = 4 * self.m

        d = trefftz.order
        p = face_basis.order
        rule = triangle_rule(d + max(p, d) + 2)
        self.face_ids = mesh.tet_faces[tet]
        self.signs = mesh.tet_face_signs[tet].astype(float)
        self.face_w = []
        self.face_X = []
        self.face_mono2 = []  # 2D monomial values (n_mono2, nq)
        self.face_mono3 = []  # local 3D monomial values for the stress basis
        self.face_mono3u = []
        self.face_normals = []
        self.face_fgc = []
        self.face_tangents = []
        for lf, fi in enumerate(self.face_ids):
            local, xyz = mesh.face_local_coords(fi, rule.points)
            self.face_w.append(rule.weights * (2.0 * mesh.face_area[fi]))
            self.face_X.append(xyz)
            self.face_mono2.append(eval_monomials_2d(face_basis.exponents, local))
            loc3 = (xyz - self.centroid) / self.radius
            self.face_mono3.append(eval_monomials_3d(trefftz.s_exponents, loc3))
            self.face_mono3u.append(eval_monomials_3d(trefftz.u_exponents, loc3))
            self.face_normals.append(self.signs[lf] * mesh.face_normal[fi])
            self.face_fgc.append(mesh.face_origin[fi])
            self.face_tangents.append((mesh.face_e1[fi], mesh.face_e2[fi]))

        # cached per-face basis values at the quadrature points
        self.T = [self._traction_modes(lf) for lf in range(4)]
        self.U = [self._face_U(lf) for lf in range(4)]
        self.wT = [self.face_w[lf][:, None, None] * self.T[lf] for lf in range(4)]
        self.F = self._assemble_F()
        try:
            self.F_cho = cho_factor(self.F)
        except np.linalg.LinAlgError as exc:
            raise SingularF(f"element F block not positive definite", element=tet) from exc

    # -- reference evaluations -----------------------------------------

    def _traction_modes(self, lf: int) -> np.ndarray:
        """(nq, 3, k) tractions n sigma_k of the stress basis on outward normal."""
        S = np.einsum("mck,mq->qck", self.trefftz.S_coeffs, self.face_mono3[lf])
        N = traction_matrix(self.face_normals[lf])
        return np.einsum("ac,qck->qak", N, S)

    def _face_U(self, lf: int) -> np.ndarray:
        """(nq, 3, m) face displacement basis values."""
        mono = self.face_mono2[lf]
        nq = mono.shape[1]
        out = np.zeros((nq, 3, self.m))
        for j in range(self.face_basis.n_scalar):
            for c in range(3):
                out[:, c, 3 * j + c] = mono[j]
        return out

    def adjoint_displacement(self, lf: int) -> np.ndarray:
        """(nq, 3, k) physical adjoint displacements (local field times radius)."""
        U = np.einsum("mck,mq->qck", self.trefftz.U_coeffs, self.face_mono3u[lf])
        return self.radius * U

    def _assemble_F(self) -> np.ndarray:
        F = np.zeros((self.k, self.k))
        for lf in range(4):
            Uv = self.adjoint_displacement(lf)
            F += np.einsum("qak,qal->kl", self.wT[lf], Uv)
        return 0.5 * (F + F.T)

    def solve_F(self, rhs) -> np.ndarray:
        return cho_solve(self.F_cho, rhs)

    def energy(self, v) -> float:
        return 0.5 * float(v @ (self.F @ v))


# -- rigid-motion projector ---------------------------------------------


def spin_liver(cache: ElementCache, rotor: Rotor) -> np.ndarray:
    """(n, 3) map from a rotation-axis variation to rigid face DOF variations.

    Constant triples carry -Spin[x^r] at the face geometric center, linear
    triples -Spin[R e_i] for the face tangents; higher-order rows vanish.
    """
    R = rotor.R
    S = np.zeros((cache.n, 3))
    for lf in range(4):
        xr = R @ (cache.face_fgc[lf] - cache.centroid)
        base = lf * cache.m
        S[base : base + 3, :] = -spin(xr)
        if cache.face_basis.order >= 1:
            e1, e2 = cache.face_tangents[lf]
            S[base + 3 : base + 6, :] = -spin(R @ e1)
            S[base + 6 : base + 9, :] = -spin(R @ e2)
    return S


def spin_filter(cache: ElementCache, rotor: Rotor) -> np.ndarray:
    """(3, n) map from face DOF variations to the induced rotation variation.

    Built from the stationarity of the linearized best-fit functional; the
    two bracketed boundary integrals reduce to closed forms in the face
    position moments because their integrands are linear in position.
    """
    R = rotor.R
    ws = cache.ws
    Br = np.zeros((3, 3))
    rhs = np.zeros((3, cache.n))
    for lf in range(4):
        # integral of X over the face, shifted to the element frame
        xbar = ws.x_moment[lf] - ws.areas[lf] * cache.centroid
        Br += ws.signs[lf] * spin(ws.normals[lf]) @ R.T @ spin(R @ xbar)
        rhs[:, lf * cache.m : (lf + 1) * cache.m] = (
            ws.signs[lf] * spin(ws.normals[lf]) @ R.T @ ws.moment0[lf]
        )
    normal = Br.T @ Br
    if np.linalg.cond(normal) > 1e12:
        raise SingularNormalMatrix(
            f"spin-filter normal matrix singular on tet {cache.tet}"
        )
    return -np.linalg.solve(normal, Br.T @ rhs)


# -- block assembly -----------------------------------------------------


@dataclass
class ElementOperators:
    """Assembled per-element blocks, projector, and residuals."""

    F: np.ndarray  # k x k
    A: np.ndarray  # k x n
    Q: np.ndarray  # k x 3
    U: np.ndarray  # n x 3
    S: np.ndarray  # n x 3 spin-liver
    G: np.ndarray  # 3 x n spin-filter
    Gt: np.ndarray  # 3 x n exact rotor derivative used in the tangent
    R_sigma: np.ndarray  # n (internal part; external traction subtracted separately)
    R_epsilon: np.ndarray  # k

    @property
    def P(self) -> np.ndarray:
        return np.eye(self.S.shape[0]) - self.S @ self.G

    @property
    def Pt(self) -> np.ndarray:
        return np.eye(self.S.shape[0]) - self.S @ self.Gt


def deformational_dofs(cache: ElementCache, rotor: Rotor, q) -> np.ndarray:
    """Face DOFs of u^d = x - c - R (X - C_ref), exact per face.

    The rigid/translation part is affine on each flat face, so it projects
    exactly onto the constant and linear monomial triples.
    """
    R = rotor.R
    q = np.asarray(q, dtype=float).reshape(4, cache.m)
    c_cur = cache.ws.centroid(q.ravel())
    out = q.copy()
    for lf in range(4):
        fgc = cache.face_fgc[lf]
        out[lf, 0:3] += fgc - c_cur - R @ (fgc - cache.centroid)
        if cache.face_basis.order >= 1:
            e1, e2 = cache.face_tangents[lf]
            out[lf, 3:6] += e1 - R @ e1
            out[lf, 6:9] += e2 - R @ e2
    return out


def assemble_blocks(
    cache: ElementCache, rotor: Rotor, q, v, boundary: BoundaryData | None = None,
    lam: float = 0.0,
) -> ElementOperators:
    """All configuration-dependent blocks and residuals of one element."""
    R = rotor.R
    q = np.asarray(q, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    S = spin_liver(cache, rotor)
    G = spin_filter(cache, rotor)
    Gt = rotor_sensitivity(cache.ws, rotor, q)
    qd = deformational_dofs(cache, rotor, q)

    A = np.zeros((cache.k, cache.n))
    Q = np.zeros((cache.k, 3))
    U = np.zeros((cache.n, 3))
    R_eps = cache.F @ v
    for lf in range(4):
        Uf = cache.U[lf]  # (nq, 3, m)
        cols = slice(lf * cache.m, (lf + 1) * cache.m)
        # weighted tractions rotated back to the reference frame
        TR = np.einsum("qak,ba->qbk", cache.wT[lf], R)
        Af = np.einsum("qbk,qbj->kj", TR, Uf)
        A[:, cols] = Af
        # compatibility boundary term: u^d is exactly U_Gamma qd on the face
        R_eps -= Af @ qd[lf]
        # Q = int T^T R^T Spin[u^d] dGamma
        ud = Uf @ qd[lf]
        Q += np.einsum("qbk,qbc->kc", TR, -np.einsum("bcm,qm->qbc", _EPS, ud))
        # U = int U_Gamma^T Spin[R sigma n] dGamma
        t = TR @ v  # weighted spatial traction samples
        U[cols, :] = np.einsum(
            "qbj,qbc->jc", Uf, -np.einsum("bcm,qm->qbc", _EPS, t)
        )

    R_sig = A.T @ v
    if boundary is not None:
        R_sig -= external_traction(cache, boundary, lam)
    return ElementOperators(
        F=cache.F, A=A, Q=Q, U=U, S=S, G=G, Gt=Gt, R_sigma=R_sig, R_epsilon=R_eps
    )


def external_traction(cache: ElementCache, boundary: BoundaryData, lam: float) -> np.ndarray:
    """Unit-load vector int U_Gamma^T t_bar over the element's loaded faces."""
    out = np.zeros(cache.n)
    for lf, fi in enumerate(cache.face_ids):
        fn = boundary.traction_faces.get(int(fi))
        if fn is None:
            continue
        Uf = cache.U[lf]
        tbar = np.asarray(fn(cache.face_X[lf], lam), dtype=float)
        out[lf * cache.m : (lf + 1) * cache.m] = np.einsum(
            "q,qaj,qa->j", cache.face_w[lf], Uf, tbar
        )
    return out


def tangent(ops: ElementOperators) -> np.ndarray:
    """Consistent (k+n) x (k+n) tangent of (R_epsilon, R_sigma) w.r.t. (v, q)."""
    k, n = ops.A.shape
    K = np.zeros((k + n, k + n))
    K[:k, :k] = ops.F
    K[:k, k:] = -(ops.A @ ops.Pt + ops.Q @ ops.Gt)
    K[k:, :k] = ops.A.T
    K[k:, k:] = -ops.U @ ops.Gt
    return K


def condense(cache: ElementCache, ops: ElementOperators):
    """Statically condensed displacement system (K_hat, R_hat_sigma).

    Eliminating the stress DOFs from the 2x2 block tangent gives
    K_hat = A^T F^-1 [A (I - SG) + Q G] - U G and
    R_hat = R_sigma - A^T F^-1 R_epsilon; solving K_hat dq = -R_hat and
    recovering dv reproduces the uncondensed solution identically.
    """
    coupling = ops.A @ ops.Pt + ops.Q @ ops.Gt
    Fi_coupling = cache.solve_F(coupling)
    K_hat = ops.A.T @ Fi_coupling - ops.U @ ops.Gt
    R_hat = ops.R_sigma - ops.A.T @ cache.solve_F(ops.R_epsilon)
    return K_hat, R_hat


def recover_stress(cache: ElementCache, ops: ElementOperators, dq) -> np.ndarray:
    """Stress DOF increment for a given displacement increment."""
    coupling = ops.A @ ops.Pt + ops.Q @ ops.Gt
    return cache.solve_F(-ops.R_epsilon + coupling @ np.asarray(dq, dtype=float))
