"""Legacy ASCII VTK output of deformed states.

Each file holds the tet mesh with nodal displacement vectors reconstructed
from the element displacement approximation supplemented with the rigid
motion of the element frame, plus per-cell Cauchy stress tensors and rotor
axial vectors.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .trefftz import VOIGT


def nodal_displacements(model, state) -> np.ndarray:
    """(N, 3) displacement vectors, averaged over the elements sharing a node.

    Within each element the displacement is the rigid motion of the
    co-rotated frame plus the rotated internal displacement field evaluated
    from the stress-conjugate modes.
    """
    mesh = model.mesh
    out = np.zeros((len(mesh.nodes), 3))
    counts = np.zeros(len(mesh.nodes))
    for e, cache in enumerate(model.caches):
        rotor = state.rotors[e]
        R = rotor.R
        nodes = mesh.tets[e]
        X = mesh.nodes[nodes]
        local = (X - cache.centroid) / cache.radius
        Uv = cache.trefftz.eval_displacement(local) * cache.radius  # (4, 3, k)
        ud = np.einsum("qck,k->qc", Uv, state.v[e])
        rigid = rotor.c + cache.centroid + (X - cache.centroid) @ R.T - X
        out[nodes] += rigid + ud @ R.T
        counts[nodes] += 1.0
    return out / counts[:, None]


def cell_stresses(model, state) -> np.ndarray:
    """(M, 3, 3) spatial Cauchy stress tensors at the element centroids."""
    out = np.empty((len(model.caches), 3, 3))
    for e, cache in enumerate(model.caches):
        centroid_local = (
            model.mesh.nodes[model.mesh.tets[e]].mean(axis=0) - cache.centroid
        ) / cache.radius
        voigt = cache.trefftz.eval_stress(centroid_local[None, :])[0] @ state.v[e]
        sig = np.empty((3, 3))
        for idx, (a, b) in enumerate(VOIGT):
            sig[a, b] = sig[b, a] = voigt[idx]
        R = state.rotors[e].R
        out[e] = R @ sig @ R.T
    return out


def write_vtk(path, model, state, comment: str = "corot-hts state") -> None:
    """Write one deformed state as a legacy ASCII VTK unstructured grid."""
    mesh = model.mesh
    disp = nodal_displacements(model, state)
    stress = cell_stresses(model, state)
    axials = Rotation.from_matrix(
        np.stack([r.R for r in state.rotors])
    ).as_rotvec()
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(f"{comment}\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(mesh.nodes)} double\n")
        for p in mesh.nodes:
            f.write(f"{p[0]:.12g} {p[1]:.12g} {p[2]:.12g}\n")
        f.write(f"CELLS {len(mesh.tets)} {5 * len(mesh.tets)}\n")
        for t in mesh.tets:
            f.write(f"4 {t[0]} {t[1]} {t[2]} {t[3]}\n")
        f.write(f"CELL_TYPES {len(mesh.tets)}\n")
        f.write("10\n" * len(mesh.tets))
        f.write(f"POINT_DATA {len(mesh.nodes)}\n")
        f.write("VECTORS displacement double\n")
        for u in disp:
            f.write(f"{u[0]:.12g} {u[1]:.12g} {u[2]:.12g}\n")
        f.write(f"CELL_DATA {len(mesh.tets)}\n")
        f.write("TENSORS cauchy_stress double\n")
        for s in stress:
            for row in s:
                f.write(f"{row[0]:.12g} {row[1]:.12g} {row[2]:.12g}\n")
            f.write("\n")
        f.write("VECTORS rotor_axial double\n")
        for a in axials:
            f.write(f"{a[0]:.12g} {a[1]:.12g} {a[2]:.12g}\n")
