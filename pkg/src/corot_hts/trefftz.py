"""Polynomial approximation bases: face displacement monomials and paired
volume stress/displacement fields solving the homogeneous elasticity
equations exactly.

The volume basis is constructed numerically: the displacement-equilibrium
(Navier) operator applied to every vector monomial gives a linear constraint
matrix over monomial coefficients, whose nullspace (minus the six rigid
fields) spans the admissible displacement solutions.  Stresses follow by
symbolic differentiation, so every stress column has identically vanishing
divergence.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import MaterialError
from .quadrature import tetrahedron_monomial_moment

# Voigt order used throughout: (11, 22, 33, 12, 23, 13), engineering shears.
VOIGT = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))


def compliance(E: float, nu: float) -> np.ndarray:
    """6x6 compliance matrix, engineering shear strains."""
    if E <= 0.0:
        raise MaterialError(f"Young's modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise MaterialError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    C = np.zeros((6, 6))
    C[:3, :3] = -nu / E
    np.fill_diagonal(C[:3, :3], 1.0 / E)
    g = 2.0 * (1.0 + nu) / E
    C[3, 3] = C[4, 4] = C[5, 5] = g
    return C


def stiffness(E: float, nu: float) -> np.ndarray:
    return np.linalg.inv(compliance(E, nu))


def traction_matrix(n) -> np.ndarray:
    """3x6 map from a Voigt stress vector to the traction on normal n."""
    n1, n2, n3 = n
    return np.array(
        [
            [n1, 0.0, 0.0, n2, 0.0, n3],
            [0.0, n2, 0.0, n1, n3, 0.0],
            [0.0, 0.0, n3, 0.0, n2, n1],
        ]
    )


# -- monomial bookkeeping ----------------------------------------------


@lru_cache(maxsize=None)
def monomials_2d(order: int) -> tuple[tuple[int, int], ...]:
    """Graded list of 2D exponents up to total degree `order`."""
    out = []
    for deg in range(order + 1):
        for a in range(deg, -1, -1):
            out.append((a, deg - a))
    return tuple(out)


@lru_cache(maxsize=None)
def monomials_3d(order: int) -> tuple[tuple[int, int, int], ...]:
    out = []
    for deg in range(order + 1):
        for a in range(deg, -1, -1):
            for b in range(deg - a, -1, -1):
                out.append((a, b, deg - a - b))
    return tuple(out)


def eval_monomials_2d(exps, pts) -> np.ndarray:
    """(n_mono, nq) values of 2D monomials at pts (nq, 2)."""
    pts = np.atleast_2d(pts)
    out = np.empty((len(exps), len(pts)))
    for i, (a, b) in enumerate(exps):
        out[i] = pts[:, 0] ** a * pts[:, 1] ** b
    return out


def eval_monomials_3d(exps, pts) -> np.ndarray:
    pts = np.atleast_2d(pts)
    out = np.empty((len(exps), len(pts)))
    for i, (a, b, c) in enumerate(exps):
        out[i] = pts[:, 0] ** a * pts[:, 1] ** b * pts[:, 2] ** c
    return out


def _diff_matrix(exps_in, exps_out, axis: int) -> np.ndarray:
    """Matrix mapping coefficients over exps_in to those of the derivative."""
    index = {e: i for i, e in enumerate(exps_out)}
    D = np.zeros((len(exps_out), len(exps_in)))
    for j, e in enumerate(exps_in):
        if e[axis] == 0:
            continue
        d = list(e)
        d[axis] -= 1
        D[index[tuple(d)], j] = e[axis]
    return D


# -- face basis ---------------------------------------------------------


@dataclass(frozen=True)
class FaceBasis:
    """Monomial displacement basis on a face, columns grouped in xyz triples."""

    order: int

    @property
    def exponents(self):
        return monomials_2d(self.order)

    @property
    def n_scalar(self) -> int:
        return len(self.exponents)

    @property
    def n_columns(self) -> int:
        return 3 * self.n_scalar

    def eval(self, pts) -> np.ndarray:
        """(nq, 3, n_columns) values of the displacement matrix at face coords."""
        mono = eval_monomials_2d(self.exponents, pts)  # (m, nq)
        nq = mono.shape[1]
        out = np.zeros((nq, 3, self.n_columns))
        for j in range(self.n_scalar):
            for c in range(3):
                out[:, c, 3 * j + c] = mono[j]
        return out


def face_basis(order: int) -> FaceBasis:
    if order < 1:
        raise ValueError("face basis order must be >= 1")
    return FaceBasis(order)


# -- volume Trefftz basis ----------------------------------------------


@dataclass(frozen=True)
class TrefftzBasis:
    """Paired displacement/stress polynomial bases in element-local coordinates.

    u(x) = U_coeffs contracted with monomials (degree <= order+1), and
    sigma(x) = S_coeffs contracted with monomials (degree <= order); the
    stress columns satisfy the equilibrium equations identically.
    """

    order: int
    E: float
    nu: float
    u_exponents: tuple
    s_exponents: tuple
    U_coeffs: np.ndarray  # (n_mono_u, 3, k)
    S_coeffs: np.ndarray  # (n_mono_s, 6, k)

    @property
    def n_modes(self) -> int:
        return self.U_coeffs.shape[2]

    def eval_displacement(self, pts) -> np.ndarray:
        """(nq, 3, k) displacement matrix at local coordinates."""
        mono = eval_monomials_3d(self.u_exponents, pts)
        return np.einsum("mck,mq->qck", self.U_coeffs, mono)

    def eval_stress(self, pts) -> np.ndarray:
        """(nq, 6, k) Voigt stress matrix at local coordinates."""
        mono = eval_monomials_3d(self.s_exponents, pts)
        return np.einsum("mck,mq->qck", self.S_coeffs, mono)

    def eval_strain(self, pts) -> np.ndarray:
        """(nq, 6, k) symbolic strain of the displacement columns (Voigt)."""
        strain_coeffs = _strain_coefficients(self.u_exponents, self.s_exponents, self.U_coeffs)
        mono = eval_monomials_3d(self.s_exponents, pts)
        return np.einsum("mck,mq->qck", strain_coeffs, mono)


def _strain_coefficients(u_exps, e_exps, U_coeffs) -> np.ndarray:
    """(n_mono_e, 6, k) Voigt strain coefficients of displacement columns."""
    D = [_diff_matrix(u_exps, e_exps, ax) for ax in range(3)]
    k = U_coeffs.shape[2]
    out = np.zeros((len(e_exps), 6, k))
    grad = [[D[j] @ U_coeffs[:, i, :] for j in range(3)] for i in range(3)]
    out[:, 0] = grad[0][0]
    out[:, 1] = grad[1][1]
    out[:, 2] = grad[2][2]
    out[:, 3] = grad[0][1] + grad[1][0]
    out[:, 4] = grad[1][2] + grad[2][1]
    out[:, 5] = grad[0][2] + grad[2][0]
    return out


def _rigid_coefficients(u_exps) -> np.ndarray:
    """(3*n_mono_u, 6) coefficient vectors of the six rigid displacement fields."""
    index = {e: i for i, e in enumerate(u_exps)}
    n = len(u_exps)
    modes = np.zeros((3 * n, 6))
    # coefficient layout: flat index = mono * 3 + component
    for i in range(3):  # translations
        modes[index[(0, 0, 0)] * 3 + i, i] = 1.0
    lin = [index[(1, 0, 0)], index[(0, 1, 0)], index[(0, 0, 1)]]
    eye = np.eye(3)
    for j in range(3):  # rotations u = e_j x X
        for ax in range(3):
            v = np.cross(eye[j], eye[ax])
            for comp in range(3):
                modes[lin[ax] * 3 + comp, 3 + j] = v[comp]
    return modes


@lru_cache(maxsize=None)
def generate_trefftz(order: int, E: float, nu: float) -> TrefftzBasis:
    """Build the equilibrium-exact stress basis and its adjoint displacements.

    Displacement candidates are all vector polynomials of degree <= order+1;
    the Navier constraint is assembled over monomial coefficients and its
    nullspace extracted by SVD.  Rigid fields are deflated, stress columns are
    scaled to unit stress norm on the reference tetrahedron.
    """
    if order < 1:
        raise ValueError("Trefftz order must be >= 1")
    compliance(E, nu)  # validates material
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    u_exps = monomials_3d(order + 1)
    c_exps = monomials_3d(max(order - 1, 0))
    n_u, n_c = len(u_exps), len(c_exps)
    Dx = [
        _diff_matrix(u_exps, u_exps, ax) for ax in range(3)
    ]  # stay on the big list, project later
    proj = np.zeros((n_c, n_u))
    idx_u = {e: i for i, e in enumerate(u_exps)}
    for i, e in enumerate(c_exps):
        proj[i, idx_u[e]] = 1.0

    # Navier rows: mu lap(u_i) + (lam+mu) d_i(div u), for each output component
    A = np.zeros((3 * n_c, 3 * n_u))
    lap = Dx[0] @ Dx[0] + Dx[1] @ Dx[1] + Dx[2] @ Dx[2]
    for i in range(3):
        for j in range(3):
            block = np.zeros((n_u, n_u))
            if i == j:
                block += mu * lap
            block += (lam + mu) * (Dx[i] @ Dx[j])
            A[i * n_c : (i + 1) * n_c, j * n_u : (j + 1) * n_u] = proj @ block

    # coefficient layout for the nullspace: flat index = mono * 3 + component
    perm = np.arange(3 * n_u).reshape(3, n_u).T.ravel()
    A = A[:, perm]

    _, s, vt = np.linalg.svd(A, full_matrices=True)
    tol = (s.max() if len(s) else 1.0) * 1e-10
    rank = int((s > tol).sum())
    null = vt[rank:].T  # (3*n_u, n_null), coeff layout mono*3+comp

    rigid = _rigid_coefficients(u_exps)
    q_r, _ = np.linalg.qr(rigid)
    defl = null - q_r @ (q_r.T @ null)
    u2, s2, _ = np.linalg.svd(defl, full_matrices=False)
    keep = s2 > 1e-10 * max(s2.max(), 1.0)
    basis = u2[:, keep]  # (3*n_u, k), orthonormal, rigid-free

    k = basis.shape[1]
    U_coeffs = basis.reshape(n_u, 3, k)

    s_exps = monomials_3d(order)
    strain = _strain_coefficients(u_exps, s_exps, U_coeffs)
    Dmat = stiffness(E, nu)
    S_coeffs = np.einsum("ab,mbk->mak", Dmat, strain)

    # unit stress norm on the reference tet
    mom = np.array([
        [
            tetrahedron_monomial_moment(
                ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]
            )
            for eb in s_exps
        ]
        for ea in s_exps
    ])
    gram = np.einsum("mak,mn,nak->k", S_coeffs, mom, S_coeffs)
    scale = 1.0 / np.sqrt(gram)
    return TrefftzBasis(
        order=order,
        E=E,
        nu=nu,
        u_exponents=u_exps,
        s_exponents=s_exps,
        U_coeffs=U_coeffs * scale,
        S_coeffs=S_coeffs * scale,
    )


def verify_adjoint(basis: TrefftzBasis, n_points: int = 50, seed: int = 0) -> float:
    """Max pointwise deviation of strain(U_v) - C * S_v at random points."""
    rng = np.random.default_rng(seed)
    pts = rng.dirichlet(np.ones(4), size=n_points)[:, :3]
    C = compliance(basis.E, basis.nu)
    strain = basis.eval_strain(pts)
    sigma = basis.eval_stress(pts)
    return float(np.abs(strain - np.einsum("ab,qbk->qak", C, sigma)).max())


def stress_divergence(basis: TrefftzBasis, pts) -> np.ndarray:
    """(nq, 3, k) pointwise divergence of every stress column (should be ~0)."""
    d_exps = monomials_3d(max(basis.order - 1, 0))
    D = [_diff_matrix(basis.s_exponents, d_exps, ax) for ax in range(3)]
    div = np.zeros((len(d_exps), 3, basis.n_modes))
    # rows of sigma: (11,12,13), (12,22,23), (13,23,33) -> Voigt 0,3,5 / 3,1,4 / 5,4,2
    rows = ((0, 3, 5), (3, 1, 4), (5, 4, 2))
    for i, comps in enumerate(rows):
        for ax, comp in enumerate(comps):
            div[:, i, :] += D[ax] @ basis.S_coeffs[:, comp, :]
    mono = eval_monomials_3d(d_exps, pts)
    return np.einsum("mck,mq->qck", div, mono)


def dump_coefficients(basis: TrefftzBasis, path) -> None:
    """Write the stress coefficient table as CSV for inspection."""
    with open(path, "w") as f:
        f.write("monomial,component,mode,coefficient\n")
        for m, e in enumerate(basis.s_exponents):
            for c in range(6):
                for k in range(basis.n_modes):
                    v = basis.S_coeffs[m, c, k]
                    if v != 0.0:
                        f.write(f"x{e[0]}y{e[1]}z{e[2]},{c},{k},{v!r}\n")
