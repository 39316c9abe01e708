import numpy as np
import pytest

from corot_hts.so3 import (
    Rotor,
    axial,
    compose,
    exp_map,
    polar_orthonormalize,
    rotation_distance,
    spin,
)


def random_rotations(n, seed=0):
    rng = np.random.default_rng(seed)
    return [exp_map(rng.uniform(-np.pi, np.pi, 3) * rng.uniform(0, 1) ** 2) for _ in range(n)]


def test_spin_axial_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = rng.standard_normal(3)
        W = spin(v)
        assert np.allclose(W, -W.T)
        assert np.allclose(axial(W), v)
        y = rng.standard_normal(3)
        assert np.allclose(W @ y, np.cross(v, y))


def test_exp_map_is_rotation():
    for R in random_rotations(30):
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-14)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-13)


def test_exp_map_small_angle_series():
    phi = np.array([1e-10, -2e-10, 5e-11])
    R = exp_map(phi)
    assert np.allclose(R, np.eye(3) + spin(phi), atol=1e-19)


def test_exp_map_known_quarter_turn():
    R = exp_map([0.0, 0.0, np.pi / 2])
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_polar_orthonormalize_projects_back():
    rng = np.random.default_rng(2)
    for R in random_rotations(10, seed=3):
        noisy = R + 1e-8 * rng.standard_normal((3, 3))
        Q = polar_orthonormalize(noisy)
        assert np.allclose(Q @ Q.T, np.eye(3), atol=1e-14)
        assert rotation_distance(Q, R) < 1e-7


def test_rotation_distance_accuracy_for_tiny_angles():
    R0 = exp_map([0.3, -0.2, 0.5])
    d = 1e-9
    R1 = exp_map([d, 0, 0]) @ R0
    assert rotation_distance(R0, R1) == pytest.approx(d, rel=1e-5)
    assert rotation_distance(R0, R0) == 0.0


def test_compose_accumulates_rotation():
    rotor = Rotor()
    rotor = compose(rotor, [0, 0, np.pi / 4])
    rotor = compose(rotor, [0, 0, np.pi / 4])
    assert rotation_distance(rotor.R, exp_map([0, 0, np.pi / 2])) < 1e-14
    assert rotor.orthogonality_defect() < 1e-14
