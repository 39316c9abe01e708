"""Best-fit element rotor from boundary integrals.

The rotation of an element is the stationary point of
J(R) = 1/2 |h|^2 with h = integral over the element boundary of
Spin[N] R^T x, where x is the current boundary position.  Every integral
involved is linear in x, so after projecting the face displacement DOFs
once, h, its Newton tangent, and the spin-filter integrals are closed-form
contractions of per-face position moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, SingularTangent
from .quadrature import triangle_rule
from .so3 import Rotor, exp_map, polar_orthonormalize, spin
from .trefftz import FaceBasis

_EYE = np.eye(3)
_ANGLE_FLOOR = 1e-12

# Levi-Civita tensor: cross(a, b)_i = _LC[i, j, k] a_j b_k
_LC = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LC[_i, _j, _k] = 1.0
    _LC[_i, _k, _j] = -1.0


@dataclass
class BestFitWorkspace:
    """Per-element referential boundary moments (depend only on the mesh)."""

    tet: int
    signs: np.ndarray  # (4,)
    normals: np.ndarray  # (4, 3) canonical face normals
    areas: np.ndarray  # (4,)
    moment0: list  # per face: (3, 3m) integral of U_Gamma over the face
    x_moment: np.ndarray  # (4, 3) integral of X over each face
    total_area: float
    centroid_ref: np.ndarray  # area-weighted boundary centroid of the reference tet
    char_radius: float
    dofs_per_face: int
    volume: float
    sn_spin: np.ndarray = None  # (4, 3, 3) signed spin matrices of the face normals

    def face_moments(self, q) -> np.ndarray:
        """(4, 3) integrals of the current position x over each face."""
        q = np.asarray(q, dtype=float).reshape(4, self.dofs_per_face)
        out = self.x_moment.copy()
        for f in range(4):
            out[f] += self.moment0[f] @ q[f]
        return out

    def centroid(self, q) -> np.ndarray:
        return self.face_moments(q).sum(axis=0) / self.total_area

    def default_tol(self) -> float:
        return 1e-12 * self.total_area**2 * self.char_radius**2


def build_workspace(mesh, tet: int, face_basis: FaceBasis) -> BestFitWorkspace:
    rule = triangle_rule(face_basis.order + 1)
    signs = mesh.tet_face_signs[tet].astype(float)
    fids = mesh.tet_faces[tet]
    normals = mesh.face_normal[fids]
    areas = mesh.face_area[fids]
    moment0 = []
    x_moment = np.empty((4, 3))
    for lf, fi in enumerate(fids):
        local, xyz = mesh.face_local_coords(fi, rule.points)
        w = rule.weights * (2.0 * mesh.face_area[fi])
        U = face_basis.eval(local)  # (nq, 3, 3m)
        moment0.append(np.einsum("q,qcj->cj", w, U))
        x_moment[lf] = xyz.T @ w
    total = float(areas.sum())
    c_ref = x_moment.sum(axis=0) / total
    verts = mesh.nodes[mesh.tets[tet]]
    r_char = float(np.linalg.norm(verts - c_ref, axis=1).max())
    return BestFitWorkspace(
        tet=tet,
        signs=signs,
        normals=normals,
        areas=areas,
        moment0=moment0,
        x_moment=x_moment,
        total_area=total,
        centroid_ref=c_ref,
        char_radius=r_char,
        dofs_per_face=face_basis.n_columns,
        volume=mesh.tet_volume(tet),
        sn_spin=signs[:, None, None] * np.einsum("bmc,fm->fbc", _LC, normals),
    )


def polar_predictor(ws: BestFitWorkspace, xm) -> np.ndarray:
    """Polar rotation of the average boundary deformation gradient.

    The surface integral of x N^T equals volume times the mean deformation
    gradient, whose polar factor coincides with the true rotation for rigid
    data.  Starting Newton here keeps it off the antipodal stationary branch
    of the functional.
    """
    F = np.zeros((3, 3))
    for f in range(4):
        F += ws.signs[f] * np.outer(xm[f], ws.normals[f])
    F /= ws.volume
    if abs(np.linalg.det(F)) < 1e-12:
        return np.eye(3)
    return polar_orthonormalize(F)


def _centered_moments(ws: BestFitWorkspace, q):
    xm = ws.face_moments(q)
    c = xm.sum(axis=0) / ws.total_area
    return xm - np.outer(ws.areas, c), c


def evaluate_h(mesh, tet, rotor: Rotor, q, workspace: BestFitWorkspace | None = None,
               face_basis: FaceBasis | None = None) -> np.ndarray:
    """Boundary integral Spin[N] R^T (x - c) over the tet surface."""
    ws = workspace or build_workspace(mesh, tet, face_basis)
    xm, _ = _centered_moments(ws, q)
    return _h_vector(ws, rotor.R, xm)


def _h_vector(ws, R, xm) -> np.ndarray:
    # sum_f sign_f Spin[N_f] R^T xbar_f, with R^T xbar_f = xbar_f @ R
    return np.einsum("fab,fb->a", ws.sn_spin, xm @ R)


def _b_matrix(ws, R, xm) -> np.ndarray:
    # sum_f sign_f Spin[N_f] R^T Spin[xbar_f]
    Sx = np.einsum("bmc,fm->fbc", _LC, xm)
    return np.einsum("fab,cb,fcd->ad", ws.sn_spin, R, Sx)


def _second_order_term(ws, R, xm, h) -> np.ndarray:
    """Rows M[j, :] = h^T sum Spin[N] R^T Spin[-Spin[e_j] x] dGamma."""
    # with y_f = (Spin[N_f] R^T)^T h this collapses to sums of cross products
    y = np.einsum("fab,cb,a->fc", ws.sn_spin, R, h)
    W = np.einsum("kmj,fm->fjk", _LC, xm)  # (xbar_f x e_j)_k
    return np.einsum("lak,fa,fjk->jl", _LC, y, W)


def rotor_sensitivity(ws: BestFitWorkspace, rotor: Rotor, q) -> np.ndarray:
    """Exact derivative (3, n) of the best-fit rotation axis w.r.t. face DOFs.

    Obtained by implicit differentiation of the stationarity system H = 0 at
    the solved rotor, so it is exact for any deformation state.  Centroid
    variations drop because the outward normals integrate to zero over a
    closed surface.
    """
    R = rotor.R
    xm, _ = _centered_moments(ws, q)
    h = _h_vector(ws, R, xm)
    B = _b_matrix(ws, R, xm)
    K = B.T @ B + _second_order_term(ws, R, xm, h)
    m = ws.dofs_per_face
    dH = np.empty((3, 4 * m))
    for f in range(4):
        SnR = ws.sn_spin[f] @ R.T
        M0 = ws.moment0[f]  # (3, m)
        cols = slice(f * m, (f + 1) * m)
        # variation of h through the face position moments
        dH[:, cols] = B.T @ (SnR @ M0)
        # variation of B contracted with h
        g = SnR.T @ h
        dH[:, cols] += np.einsum("iab,a,bj->ij", _LC, g, M0)
    return -np.linalg.solve(K, dH)


def functional_value(ws, R, q) -> float:
    xm, _ = _centered_moments(ws, q)
    h = _h_vector(ws, R, xm)
    return 0.5 * float(h @ h)


@dataclass
class RotorReport:
    iterations: int
    residual_norms: list = field(default_factory=list)
    converged: bool = False
    restarts: int = 0


def best_fit_rotor(
    mesh,
    tet,
    q,
    rotor_init: Rotor | None = None,
    tol: float | None = None,
    max_iter: int = 20,
    workspace: BestFitWorkspace | None = None,
    face_basis: FaceBasis | None = None,
) -> tuple[Rotor, RotorReport]:
    """Newton solve of the stationarity system H(R) = 0 of the best-fit functional.

    Warm-started from `rotor_init` (identity by default).  On failure to
    converge, restarts once from a quarter turn about each coordinate axis and
    keeps the converged candidate with the smallest functional value.
    """
    ws = workspace or build_workspace(mesh, tet, face_basis)
    if tol is None:
        tol = ws.default_tol()
    xm, c = _centered_moments(ws, q)
    if rotor_init is not None:
        R0 = rotor_init.R
    else:
        R0 = polar_predictor(ws, xm)

    def attempt(R):
        report = RotorReport(iterations=0)
        for it in range(max_iter):
            h = _h_vector(ws, R, xm)
            B = _b_matrix(ws, R, xm)
            H = B.T @ h
            norm = float(np.linalg.norm(H))
            report.residual_norms.append(norm)
            report.iterations = it
            if norm <= tol:
                report.converged = True
                return R, report
            K = B.T @ B + _second_order_term(ws, R, xm, h)
            if np.linalg.cond(K) > 1e12:
                raise SingularTangent(
                    f"rotor tangent condition number exceeds 1e12 on tet {ws.tet}"
                )
            dphi = np.linalg.solve(K, -H)
            R = polar_orthonormalize(exp_map(dphi) @ R)
            if np.linalg.norm(dphi) <= _ANGLE_FLOOR:
                # the update angle is at roundoff level: the residual has hit
                # its numerical floor even if it sits above the requested tol
                report.iterations = it + 1
                report.converged = True
                return R, report
        report.residual_norms.append(float(np.linalg.norm(_b_matrix(ws, R, xm).T @ _h_vector(ws, R, xm))))
        return R, report

    R, report = attempt(R0.copy())
    if not report.converged:
        # fall back to the polar predictor, then bounded deterministic
        # restarts as a multiple-minima guard
        candidates = []
        starts = [polar_predictor(ws, xm)]
        for ax in range(3):
            phi = np.zeros(3)
            phi[ax] = 0.5 * np.pi
            starts.append(polar_orthonormalize(exp_map(phi) @ R0))
        for i, Rs in enumerate(starts):
            Rr, rep = attempt(Rs)
            rep.restarts = i + 1
            if rep.converged:
                xm_c, _ = _centered_moments(ws, q)
                candidates.append((0.5 * _h_vector(ws, Rr, xm_c) @ _h_vector(ws, Rr, xm_c), Rr, rep))
        if candidates:
            _, R, report = min(candidates, key=lambda t: t[0])
        else:
            raise NoConvergence(
                f"best-fit rotor did not converge on tet {ws.tet}",
                residual_norm=report.residual_norms[-1],
                trace=report.residual_norms,
            )
    rotor = Rotor(R=R, c=c - ws.centroid_ref)
    return rotor, report
