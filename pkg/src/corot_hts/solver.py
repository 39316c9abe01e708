"""Global assembly and nonlinear solution drivers.

The global unknowns are the face displacement DOFs; stress DOFs live at the
element level and are condensed out of every linear solve, then recovered
exactly from the same factorization.  Two drivers are provided: plain
load-stepped Newton iteration and arc-length continuation controlled by the
accumulated element rotation angles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .bestfit import best_fit_rotor
from .element import BoundaryData, ElementCache, assemble_blocks, condense
from .errors import (
    InsufficientConstraints,
    LinearSolveFailure,
    NoConvergence,
    StepFailure,
)
from .quadrature import triangle_rule
from .so3 import Rotor
from .trefftz import FaceBasis, TrefftzBasis, face_basis, generate_trefftz


class DofMap:
    """Global numbering: one contiguous block of face DOFs per mesh face."""

    def __init__(self, mesh, fb: FaceBasis):
        self.mesh = mesh
        self.per_face = fb.n_columns
        self.n_dofs = mesh.n_faces * self.per_face

    def face_dofs(self, face: int) -> np.ndarray:
        start = face * self.per_face
        return np.arange(start, start + self.per_face)

    def element_dofs(self, tet: int) -> np.ndarray:
        return np.concatenate(
            [self.face_dofs(f) for f in self.mesh.tet_faces[tet]]
        )


@dataclass
class SolverState:
    """Snapshot of all unknowns at one load level."""

    q: np.ndarray
    v: np.ndarray  # (n_elements, k)
    rotors: list
    lam: float = 0.0
    step: int = 0

    def copy(self) -> "SolverState":
        return SolverState(
            q=self.q.copy(),
            v=self.v.copy(),
            rotors=[r.copy() for r in self.rotors],
            lam=self.lam,
            step=self.step,
        )


@dataclass
class ConvergenceTrace:
    residual_norms: list = field(default_factory=list)
    increment_norms: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


class Model:
    """Mesh plus discretization plus boundary data, with all element caches."""

    def __init__(
        self,
        mesh,
        E: float,
        nu: float,
        stress_order: int = 3,
        displacement_order: int = 2,
        boundary: BoundaryData | None = None,
    ):
        self.mesh = mesh
        self.trefftz: TrefftzBasis = generate_trefftz(stress_order, E, nu)
        self.face_basis: FaceBasis = face_basis(displacement_order)
        self.dofmap = DofMap(mesh, self.face_basis)
        self.boundary = boundary or BoundaryData(traction_faces={}, displacement_faces={})
        self.caches = [
            ElementCache(mesh, t, self.trefftz, self.face_basis)
            for t in range(len(mesh.tets))
        ]
        self.k = self.trefftz.n_modes
        self.diameter = float(
            np.linalg.norm(mesh.nodes.max(axis=0) - mesh.nodes.min(axis=0))
        )
        self.threads = 1
        self.fixed_dofs, self._fixed_info = self._collect_fixed_dofs()
        self.free_dofs = np.setdiff1d(
            np.arange(self.dofmap.n_dofs), self.fixed_dofs, assume_unique=True
        )
        self._check_constraints()

    # -- constraints ----------------------------------------------------

    def _collect_fixed_dofs(self):
        fixed = []
        info = []
        m_scalar = self.face_basis.n_scalar
        for fi, (fn, mask) in self.boundary.displacement_faces.items():
            base = fi * self.dofmap.per_face
            for j in range(m_scalar):
                for c in range(3):
                    if mask[c]:
                        fixed.append(base + 3 * j + c)
                        info.append((fi, j, c))
        order = np.argsort(fixed) if fixed else []
        return (
            np.asarray(fixed, dtype=int)[order] if fixed else np.empty(0, dtype=int),
            [info[i] for i in order] if fixed else [],
        )

    def _check_constraints(self):
        """The constrained DOFs must pin all six global rigid modes."""
        if len(self.fixed_dofs) == 0:
            raise InsufficientConstraints("no displacement constraints given")
        eye = np.eye(3)
        rows = np.zeros((len(self.fixed_dofs), 6))
        for r, (fi, j, c) in enumerate(self._fixed_info):
            if j == 0:
                rows[r, c] = 1.0  # translations act on the constant triple
            for ax in range(3):  # rotations u = e_ax x X, affine on the face
                if j == 0:
                    val = np.cross(eye[ax], self.mesh.face_origin[fi])[c]
                elif j == 1:
                    val = np.cross(eye[ax], self.mesh.face_e1[fi])[c]
                elif j == 2:
                    val = np.cross(eye[ax], self.mesh.face_e2[fi])[c]
                else:
                    val = 0.0
                rows[r, 3 + ax] = val
        if np.linalg.matrix_rank(rows, tol=1e-10) < 6:
            raise InsufficientConstraints(
                "constraints leave global rigid modes unconstrained"
            )

    def dirichlet_values(self, lam: float) -> np.ndarray:
        """Prescribed values for the fixed DOFs at load factor lam."""
        from .projection import project_face_field

        values = np.zeros(len(self.fixed_dofs))
        coeffs = {}
        for r, (fi, j, c) in enumerate(self._fixed_info):
            if fi not in coeffs:
                fn, _ = self.boundary.displacement_faces[fi]
                coeffs[fi] = project_face_field(
                    self.mesh, fi, self.face_basis, lambda X: fn(X, lam)
                )
            values[r] = coeffs[fi][3 * j + c]
        return values

    # -- loads and energies ---------------------------------------------

    def load_vector(self, lam: float) -> np.ndarray:
        """Work-conjugate load vector of the prescribed tractions at lam."""
        f = np.zeros(self.dofmap.n_dofs)
        rule = triangle_rule(2 * self.face_basis.order + 2)
        for fi, fn in self.boundary.traction_faces.items():
            local, xyz = self.mesh.face_local_coords(fi, rule.points)
            w = rule.weights * (2.0 * self.mesh.face_area[fi])
            U = self.face_basis.eval(local)
            tbar = np.asarray(fn(xyz, lam), dtype=float)
            f[self.dofmap.face_dofs(fi)] = np.einsum("q,qaj,qa->j", w, U, tbar)
        return f

    def energy(self, state: SolverState) -> float:
        return sum(
            c.energy(state.v[e]) for e, c in enumerate(self.caches)
        )

    def initial_state(self) -> SolverState:
        n_el = len(self.caches)
        return SolverState(
            q=np.zeros(self.dofmap.n_dofs),
            v=np.zeros((n_el, self.k)),
            rotors=[Rotor() for _ in range(n_el)],
        )

    # -- assembly -------------------------------------------------------

    def assemble(self, state: SolverState, lam: float):
        """Condensed global tangent and residual at the given configuration.

        Rotors are re-solved (warm-started) per element.  Returns the sparse
        tangent, the residual including the external load, and the per-element
        recovery data (coupling block and compatibility residual).
        """
        ndof = self.dofmap.n_dofs
        n_el = len(self.caches)
        m = self.dofmap.per_face * 4
        rows = np.empty(n_el * m * m, dtype=np.int32)
        cols = np.empty(n_el * m * m, dtype=np.int32)
        vals = np.empty(n_el * m * m)
        residual = -self.load_vector(lam)
        recovery = [None] * n_el

        def element_work(e):
            cache = self.caches[e]
            dofs = self.dofmap.element_dofs(e)
            qe = state.q[dofs]
            rotor, _ = best_fit_rotor(
                self.mesh, e, qe, rotor_init=state.rotors[e], workspace=cache.ws
            )
            ops = assemble_blocks(cache, rotor, qe, state.v[e])
            Ke, Re = condense(cache, ops)
            coupling = ops.A @ ops.Pt + ops.Q @ ops.Gt
            return e, dofs, rotor, ops, Ke, Re, coupling

        if self.threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(element_work, range(n_el)))
        else:
            results = map(element_work, range(n_el))
        for e, dofs, rotor, ops, Ke, Re, coupling in results:
            state.rotors[e] = rotor
            residual[dofs] += Re
            recovery[e] = (coupling, ops.R_epsilon)
            base = e * m * m
            rows[base : base + m * m] = np.repeat(dofs, m)
            cols[base : base + m * m] = np.tile(dofs, m)
            vals[base : base + m * m] = Ke.ravel()
        K = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsc()
        return K, residual, recovery

    def recover(self, state: SolverState, recovery, dq: np.ndarray) -> None:
        """Exact stress DOF update for a global displacement increment."""
        for e, cache in enumerate(self.caches):
            dofs = self.dofmap.element_dofs(e)
            coupling, r_eps = recovery[e]
            state.v[e] += cache.solve_F(-r_eps + coupling @ dq[dofs])


class _Factorized:
    """Factorization of the free-free block, reusable for multiple right sides."""

    def __init__(self, model: Model, K):
        self.free = model.free_dofs
        Kff = K[np.ix_(self.free, self.free)].tocsc()
        try:
            self.lu = splu(Kff)
        except RuntimeError as exc:
            raise LinearSolveFailure(f"sparse factorization failed: {exc}") from exc

    def solve(self, rhs_free: np.ndarray) -> np.ndarray:
        out = self.lu.solve(rhs_free)
        if not np.all(np.isfinite(out)):
            raise LinearSolveFailure("linear solve produced non-finite values")
        return out


def newton_solve(
    model: Model,
    state: SolverState,
    lam: float,
    tol_r: float = 1e-9,
    tol_q: float = 1e-12,
    max_iter: int = 25,
) -> ConvergenceTrace:
    """Equilibrate the state at fixed load factor lam, in place.

    The force tolerance is relative to the external load norm with an absolute
    fallback for load-free (displacement-driven) problems; the increment
    tolerance is relative to the configuration scale.
    """
    free = model.free_dofs
    if len(model.fixed_dofs):
        state.q[model.fixed_dofs] = model.dirichlet_values(lam)
    load_norm = float(np.linalg.norm(model.load_vector(lam)[free]))
    q_ref = model.diameter + float(np.linalg.norm(state.q))
    trace = ConvergenceTrace()
    for it in range(max_iter):
        K, residual, recovery = model.assemble(state, lam)
        r_norm = float(np.linalg.norm(residual[free]))
        trace.residual_norms.append(r_norm)
        trace.iterations = it
        # displacement-driven problems have no load to scale against, so the
        # initial imbalance serves as the reference
        r_ref = max(load_norm, trace.residual_norms[0], 1e-10)
        if r_norm <= tol_r * r_ref:
            trace.converged = True
            state.lam = lam
            return trace
        if r_norm > 1e3 * r_ref:
            # clearly diverging: bail out early so substepping can react
            raise NoConvergence(
                f"Newton diverging at lam={lam}",
                residual_norm=r_norm,
                trace=trace.residual_norms,
            )
        fact = _Factorized(model, K)
        dq_free = fact.solve(-residual[free])
        dq = np.zeros_like(state.q)
        dq[free] = dq_free
        state.q += dq
        model.recover(state, recovery, dq)
        dq_norm = float(np.linalg.norm(dq_free))
        trace.increment_norms.append(dq_norm)
        if dq_norm <= tol_q * q_ref:
            trace.converged = True
            state.lam = lam
            return trace
    raise NoConvergence(
        f"Newton did not converge in {max_iter} iterations at lam={lam}",
        residual_norm=trace.residual_norms[-1],
        trace=trace.residual_norms,
    )


@dataclass
class StepRecord:
    """One converged increment of either driver."""

    step: int
    lam: float
    arc: float
    dq_norm: float
    rotation_norm: float
    iterations: int
    residual: float
    energy: float
    control_residual: float = 0.0


def _restore(state: SolverState, saved: SolverState) -> None:
    state.q[:] = saved.q
    state.v[:] = saved.v
    state.rotors = [r.copy() for r in saved.rotors]
    state.lam = saved.lam


def run_load_steps(
    model: Model,
    state: SolverState,
    lam_values,
    tol_r: float = 1e-9,
    tol_q: float = 1e-12,
    max_iter: int = 25,
    max_subdivisions: int = 12,
    callback=None,
) -> list[StepRecord]:
    """Equilibrate at each target load factor in turn, with substepping.

    A failed increment is retried from the last converged state with half the
    load increment (bounded by max_subdivisions bisections per target); every
    converged increment gets its own record, so intermediate substeps appear
    alongside the requested targets.
    """
    records = []
    step = state.step
    for target in lam_values:
        subdiv = 0
        next_lam = target
        while True:
            saved = state.copy()
            q_prev = state.q.copy()
            try:
                trace = newton_solve(model, state, next_lam, tol_r, tol_q, max_iter)
            except (NoConvergence, LinearSolveFailure):
                _restore(state, saved)
                subdiv += 1
                if subdiv > max_subdivisions:
                    raise StepFailure(
                        f"load step to {target} failed after "
                        f"{max_subdivisions} subdivisions"
                    )
                next_lam = state.lam + 0.5 * (next_lam - state.lam)
                continue
            step += 1
            state.step = step
            dq = state.q - q_prev
            rot = np.sqrt(
                sum(float(np.linalg.norm(r.R - np.eye(3))) ** 2 for r in state.rotors)
            )
            rec = StepRecord(
                step=step,
                lam=next_lam,
                arc=0.0,
                dq_norm=float(np.linalg.norm(dq)),
                rotation_norm=rot,
                iterations=trace.iterations,
                residual=trace.residual_norms[-1],
                energy=model.energy(state),
            )
            rec.trace = trace
            records.append(rec)
            if callback is not None:
                callback(state, rec)
            if next_lam >= target - 1e-14:
                break
            # grow toward the target after a successful substep
            subdiv = 0
            next_lam = min(target, next_lam + 1.5 * (next_lam - saved.lam))
    return records


@dataclass
class ArcLengthParams:
    """Hyper-sphere continuation parameters.

    The control equation ties the accumulated element rotation increments,
    measured through the frozen spin-filters, plus the scaled load increment
    to the sphere radius s.
    """

    s: float
    psi: float = 0.0
    shrink: float = 0.5
    grow: float = 1.2
    max_halvings: int = 8
    grow_threshold: int = 4
    max_iter: int = 25
    tol_r: float = 1e-9
    tol_control: float = 1e-10


def _rotation_metric(model: Model, state: SolverState) -> sp.csr_matrix:
    """Global metric W with dq^T W dq = sum over elements of |G_e dq_e|^2.

    The spin-filters are evaluated at the increment-start rotors and frozen.
    """
    from .element import spin_filter

    ndof = model.dofmap.n_dofs
    rows, cols, vals = [], [], []
    m = model.dofmap.per_face * 4
    for e, cache in enumerate(model.caches):
        G = spin_filter(cache, state.rotors[e])
        W = G.T @ G
        dofs = model.dofmap.element_dofs(e)
        rows.append(np.repeat(dofs, m))
        cols.append(np.tile(dofs, m))
        vals.append(W.ravel())
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    ).tocsr()


def arc_length_step(
    model: Model,
    state: SolverState,
    params: ArcLengthParams,
    predictor: tuple | None = None,
) -> StepRecord:
    """Advance one converged increment of arc-length continuation, in place.

    Solves the bordered system by block elimination: the tangent is factorized
    once per iteration and applied to both the residual and the load
    direction, then the scalar control equation fixes the load increment.
    On failure the radius is halved (bounded) and the increment retried.

    Arc-length runs require homogeneous displacement constraints.
    """
    if len(model.fixed_dofs) and np.linalg.norm(model.dirichlet_values(1.0)) > 0:
        raise StepFailure("arc-length control requires homogeneous displacement data")

    free = model.free_dofs
    f_unit = model.load_vector(1.0)
    start = state.copy()
    W = _rotation_metric(model, state)
    s = params.s
    psi2 = params.psi**2
    r_ref = max(float(np.linalg.norm(f_unit[free])), 1e-10)

    for halving in range(params.max_halvings + 1):
        state.q[:] = start.q
        state.v[:] = start.v
        state.rotors = [r.copy() for r in start.rotors]
        lam = start.lam
        try:
            dq_acc, dlam_acc, trace = _arc_iterate(
                model, state, W, f_unit, s, psi2, params, lam, r_ref, predictor
            )
        except (NoConvergence, LinearSolveFailure):
            s *= params.shrink
            continue
        state.lam = lam + dlam_acc
        state.step = start.step + 1
        control = float(dq_acc @ (W @ dq_acc) + psi2 * dlam_acc**2 - s * s)
        rec = StepRecord(
            step=state.step,
            lam=state.lam,
            arc=s,
            dq_norm=float(np.linalg.norm(dq_acc)),
            rotation_norm=float(np.sqrt(max(dq_acc @ (W @ dq_acc), 0.0))),
            iterations=trace.iterations,
            residual=trace.residual_norms[-1],
            energy=model.energy(state),
            control_residual=control,
        )
        rec.trace = trace
        rec.increment = (dq_acc, dlam_acc)
        rec.accepted_radius = s
        rec.grow = trace.iterations <= params.grow_threshold
        return rec
    raise StepFailure(
        f"arc-length increment failed after {params.max_halvings} radius halvings"
    )


def _arc_iterate(model, state, W, f_unit, s, psi2, params, lam0, r_ref, predictor):
    free = model.free_dofs
    ndof = model.dofmap.n_dofs
    dq_acc = np.zeros(ndof)
    dlam_acc = 0.0
    trace = ConvergenceTrace()

    if predictor is not None:
        pq, plam = predictor
        norm = np.sqrt(max(pq @ (W @ pq) + psi2 * plam**2, 1e-300))
        scale = s / norm
        dq_acc = pq * scale
        dlam_acc = plam * scale
        state.q += dq_acc
        # stress recovery happens with the first corrector pass

    for it in range(params.max_iter):
        lam = lam0 + dlam_acc
        K, residual, recovery = model.assemble(state, lam)
        r_norm = float(np.linalg.norm(residual[free]))
        control = float(dq_acc @ (W @ dq_acc) + psi2 * dlam_acc**2 - s * s)
        trace.residual_norms.append(r_norm)
        trace.iterations = it
        if r_norm <= params.tol_r * r_ref and abs(control) <= params.tol_control * s * s:
            trace.converged = True
            return dq_acc, dlam_acc, trace

        fact = _Factorized(model, K)
        dq_r = fact.solve(-residual[free])
        dq_f = fact.solve(f_unit[free])
        a = 2.0 * (W @ dq_acc)[free]
        b = 2.0 * psi2 * dlam_acc
        denom = float(a @ dq_f + b)
        if it == 0 and predictor is None and dlam_acc == 0.0 and dq_acc @ dq_acc == 0.0:
            # first iteration of a fresh path: pick the increment direction by
            # scaling the pure load-direction solution onto the sphere
            norm = np.sqrt(max(dq_f @ (W[free][:, free] @ dq_f) + psi2, 1e-300))
            dlam = s / norm
            dq_free = dlam * dq_f + dq_r
        else:
            if abs(denom) < 1e-300:
                raise NoConvergence("singular control equation", residual_norm=r_norm)
            dlam = -(control + a @ dq_r) / denom
            dq_free = dq_r + dlam * dq_f
        dq = np.zeros(ndof)
        dq[free] = dq_free
        state.q += dq
        model.recover(state, recovery, dq)
        dq_acc += dq
        dlam_acc += dlam
    raise NoConvergence(
        "arc-length corrector did not converge",
        residual_norm=trace.residual_norms[-1],
        trace=trace.residual_norms,
    )


def run_arc_length(
    model: Model,
    state: SolverState,
    params: ArcLengthParams,
    n_steps: int,
    callback=None,
) -> list[StepRecord]:
    """Trace an equilibrium path for a fixed number of increments.

    The radius adapts between increments: growth after fast convergence,
    halving (inside arc_length_step) on failure.  The predictor is the
    previous converged increment rescaled to the current radius.
    """
    records = []
    predictor = None
    s = params.s
    for _ in range(n_steps):
        p = ArcLengthParams(**{**params.__dict__, "s": s})
        rec = arc_length_step(model, state, p, predictor)
        records.append(rec)
        predictor = rec.increment
        s = rec.accepted_radius * (params.grow if rec.grow else 1.0)
        if callback is not None:
            callback(state, rec)
    return records


def mean_set_displacement(model: Model, q: np.ndarray, set_name: str) -> np.ndarray:
    """Average constant-mode displacement over a named boundary face set."""
    faces = model.mesh.boundary_sets[set_name]
    out = np.zeros(3)
    for fi in faces:
        out += q[fi * model.dofmap.per_face : fi * model.dofmap.per_face + 3]
    return out / len(faces)
