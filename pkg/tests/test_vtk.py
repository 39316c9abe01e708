import numpy as np
import pytest

from corot_hts.element import BoundaryData
from corot_hts.mesh import TetMesh, generate_beam
from corot_hts.so3 import exp_map
from corot_hts.solver import Model, run_load_steps
from corot_hts.vtk import cell_stresses, nodal_displacements, write_vtk


@pytest.fixture(scope="module")
def stretched():
    mesh = TetMesh(*generate_beam(1, 1, 3, 0.5, 0.5, 1.5))
    pull = np.array([0.0, 0.0, 0.01])
    boundary = BoundaryData.from_sets(
        mesh,
        displacements={
            "left": (lambda X, lam: np.zeros_like(X), [1, 1, 1]),
            "right": (lambda X, lam: lam * np.tile(pull, (len(X), 1)), [1, 1, 1]),
        },
    )
    model = Model(mesh, E=1.0, nu=0.0, boundary=boundary)
    state = model.initial_state()
    run_load_steps(model, state, [1.0])
    return mesh, model, state


def test_nodal_displacements_of_uniform_stretch(stretched):
    mesh, model, state = stretched
    disp = nodal_displacements(model, state)
    # axial displacement grows linearly along the bar: u_z = eps (z + L/2)
    eps = 0.01 / 1.5
    expected = eps * (mesh.nodes[:, 2] + 0.75)
    assert np.abs(disp[:, 2] - expected).max() < 1e-8
    assert np.abs(disp[:, :2]).max() < 1e-8


def test_cell_stresses_of_uniform_stretch(stretched):
    _, model, state = stretched
    sig = cell_stresses(model, state)
    eps = 0.01 / 1.5
    for s in sig:
        assert s[2, 2] == pytest.approx(eps, rel=1e-6)
        assert np.abs(s - np.diag([0.0, 0.0, s[2, 2]])).max() < 1e-8
        assert np.abs(s - s.T).max() < 1e-14


def test_rigid_rotation_reproduced_at_nodes():
    mesh = TetMesh(*generate_beam(1, 1, 2, 0.5, 0.5, 1.0))
    Q = exp_map([0.0, 0.4, 0.0])

    def rigid(X, lam):
        return lam * (X @ Q.T - X)

    boundary = BoundaryData.from_sets(
        mesh,
        displacements={name: (rigid, [1, 1, 1]) for name in ("left", "right", "sides")},
    )
    model = Model(mesh, E=1.0, nu=0.25, boundary=boundary)
    state = model.initial_state()
    run_load_steps(model, state, [0.5, 1.0])
    disp = nodal_displacements(model, state)
    assert np.abs(disp - (mesh.nodes @ Q.T - mesh.nodes)).max() < 1e-8
    assert np.abs(cell_stresses(model, state)).max() < 1e-9


def test_vtk_file_structure(stretched, tmp_path):
    mesh, model, state = stretched
    path = tmp_path / "state.vtk"
    write_vtk(path, model, state, comment="uniaxial stretch")
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 2.0"
    assert lines[1] == "uniaxial stretch"
    assert lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert lines[4] == f"POINTS {len(mesh.nodes)} double"

    text = path.read_text()
    assert f"CELLS {len(mesh.tets)} {5 * len(mesh.tets)}" in text
    assert f"CELL_TYPES {len(mesh.tets)}" in text
    assert text.count("\n10\n") >= 1
    assert f"POINT_DATA {len(mesh.nodes)}" in text
    assert "VECTORS displacement double" in text
    assert f"CELL_DATA {len(mesh.tets)}" in text
    assert "TENSORS cauchy_stress double" in text
    assert "VECTORS rotor_axial double" in text

    # every cell line references valid node indices
    start = lines.index(f"CELLS {len(mesh.tets)} {5 * len(mesh.tets)}") + 1
    for line in lines[start : start + len(mesh.tets)]:
        parts = [int(x) for x in line.split()]
        assert parts[0] == 4
        assert all(0 <= p < len(mesh.nodes) for p in parts[1:])
