import numpy as np
import pytest

from corot_hts.bestfit import (
    best_fit_rotor,
    build_workspace,
    evaluate_h,
    functional_value,
    polar_predictor,
    rotor_sensitivity,
)
from corot_hts.mesh import TetMesh
from corot_hts.oracles import brute_force_rotor, rigid_motion_field
from corot_hts.projection import project_tet_field
from corot_hts.so3 import Rotor, exp_map, rotation_distance
from corot_hts.trefftz import face_basis


def random_tet_mesh(rng):
    while True:
        nodes = rng.uniform(-1, 1, (4, 3))
        try:
            return TetMesh(nodes, np.array([[0, 1, 2, 3]]))
        except Exception:
            continue


@pytest.fixture(scope="module")
def fb():
    return face_basis(2)


def rigid_dofs(mesh, fb, Q, t):
    gen = rigid_motion_field(Q, t)
    return gen(mesh, mesh.tet_faces[0], fb)


def test_rigid_recovery_random(fb):
    rng = np.random.default_rng(0)
    for _ in range(25):
        mesh = random_tet_mesh(rng)
        ws = build_workspace(mesh, 0, fb)
        Q = exp_map(rng.uniform(-np.pi, np.pi, 3) * rng.uniform(0, 0.9))
        t = rng.standard_normal(3)
        q = rigid_dofs(mesh, fb, Q, t)
        rotor, report = best_fit_rotor(mesh, 0, q, workspace=ws)
        assert report.converged
        assert rotation_distance(rotor.R, Q) < 1e-12


def test_translation_only_gives_identity(fb):
    rng = np.random.default_rng(1)
    mesh = random_tet_mesh(rng)
    q = rigid_dofs(mesh, fb, np.eye(3), np.array([0.3, -0.7, 2.0]))
    rotor, _ = best_fit_rotor(mesh, 0, q, workspace=build_workspace(mesh, 0, fb))
    assert rotation_distance(rotor.R, np.eye(3)) < 1e-13


def test_stationarity_residual_vanishes_at_solution(fb):
    rng = np.random.default_rng(2)
    mesh = random_tet_mesh(rng)
    ws = build_workspace(mesh, 0, fb)
    q = rigid_dofs(mesh, fb, exp_map([0.4, 0.1, -0.2]), np.zeros(3))
    q += 1e-3 * rng.standard_normal(len(q))
    rotor, _ = best_fit_rotor(mesh, 0, q, workspace=ws)
    h = evaluate_h(mesh, 0, rotor, q, workspace=ws)
    scale = ws.total_area * ws.char_radius
    assert np.linalg.norm(h) < 1e-10 * scale


def test_agrees_with_brute_force_oracle(fb):
    rng = np.random.default_rng(3)
    for _ in range(5):
        mesh = random_tet_mesh(rng)
        ws = build_workspace(mesh, 0, fb)
        Q = exp_map(rng.uniform(-1.5, 1.5, 3))
        q = rigid_dofs(mesh, fb, Q, rng.standard_normal(3))
        q += 5e-3 * rng.standard_normal(len(q))
        rotor, _ = best_fit_rotor(mesh, 0, q, workspace=ws)
        oracle = brute_force_rotor(mesh, 0, q, workspace=ws, coarse=40)
        assert rotation_distance(rotor.R, oracle.R) < 1e-5


def test_polar_predictor_matches_rigid(fb):
    rng = np.random.default_rng(4)
    mesh = random_tet_mesh(rng)
    ws = build_workspace(mesh, 0, fb)
    Q = exp_map([0.5, -0.8, 0.3])
    q = rigid_dofs(mesh, fb, Q, np.zeros(3))
    xm = ws.face_moments(q)
    xm -= np.outer(ws.areas, xm.sum(axis=0) / ws.total_area)
    assert rotation_distance(polar_predictor(ws, xm), Q) < 1e-12


def test_functional_zero_only_at_minimum(fb):
    rng = np.random.default_rng(5)
    mesh = random_tet_mesh(rng)
    ws = build_workspace(mesh, 0, fb)
    Q = exp_map([0.2, 0.9, -0.4])
    q = rigid_dofs(mesh, fb, Q, np.zeros(3))
    assert functional_value(ws, Q, q) < 1e-24
    assert functional_value(ws, np.eye(3), q) > 1e-6


def test_warm_start_converges_in_one_iteration(fb):
    rng = np.random.default_rng(6)
    mesh = random_tet_mesh(rng)
    ws = build_workspace(mesh, 0, fb)
    Q = exp_map([0.3, 0.2, 0.6])
    q = rigid_dofs(mesh, fb, Q, np.zeros(3))
    rotor, _ = best_fit_rotor(mesh, 0, q, workspace=ws)
    _, report = best_fit_rotor(mesh, 0, q, rotor_init=rotor, workspace=ws)
    assert report.iterations <= 1


def test_rotor_sensitivity_matches_finite_differences(fb):
    rng = np.random.default_rng(7)
    mesh = random_tet_mesh(rng)
    ws = build_workspace(mesh, 0, fb)
    Q = exp_map([0.7, -0.3, 0.4])
    q = rigid_dofs(mesh, fb, Q, np.zeros(3))
    q += 0.05 * rng.standard_normal(len(q))
    rotor, _ = best_fit_rotor(mesh, 0, q, workspace=ws)
    G = rotor_sensitivity(ws, rotor, q)

    h = 1e-6
    fd = np.empty_like(G)
    for j in range(len(q)):
        qp, qm = q.copy(), q.copy()
        qp[j] += h
        qm[j] -= h
        rp, _ = best_fit_rotor(mesh, 0, qp, rotor_init=rotor, workspace=ws)
        rm, _ = best_fit_rotor(mesh, 0, qm, rotor_init=rotor, workspace=ws)
        # relative rotation vector between the two perturbed rotors
        W = rp.R @ rm.R.T
        dphi = np.array([W[2, 1] - W[1, 2], W[0, 2] - W[2, 0], W[1, 0] - W[0, 1]]) / 2
        fd[:, j] = dphi / (2 * h)
    scale = max(np.abs(fd).max(), 1e-30)
    assert np.abs(G - fd).max() / scale < 1e-6


def test_drift_free_under_repeated_solves(fb):
    # re-solving from its own result must not drift the rotor
    rng = np.random.default_rng(8)
    mesh = random_tet_mesh(rng)
    ws = build_workspace(mesh, 0, fb)
    q = rigid_dofs(mesh, fb, exp_map([0.1, 0.5, -0.9]), np.zeros(3))
    q += 1e-2 * rng.standard_normal(len(q))
    rotor, _ = best_fit_rotor(mesh, 0, q, workspace=ws)
    R_first = rotor.R.copy()
    for _ in range(50):
        rotor, _ = best_fit_rotor(mesh, 0, q, rotor_init=rotor, workspace=ws)
    assert rotation_distance(rotor.R, R_first) < 1e-13
