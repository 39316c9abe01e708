"""Tetrahedral meshes: topology, oriented faces, face frames, file I/O.

Faces are stored once with a canonical orientation (vertices listed so the
lowest node index comes first and the canonical normal follows the stored
winding).  Each adjacent tet records the sign relating its outward normal
to the canonical one, so displacement DOFs attached to a face are shared
by both neighbouring tets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFace, ParseError, TopologyError
from .quadrature import triangle_rule

# Local faces of a positively oriented tet (n0,n1,n2,n3), wound outward.
_TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


@dataclass(frozen=True)
class FaceFrame:
    """Orthonormal in-plane frame of a flat triangular face."""

    origin: np.ndarray  # geometric center (mean of the three vertices)
    e1: np.ndarray
    e2: np.ndarray
    normal: np.ndarray  # canonical unit normal, N = e1 x e2
    area: float


class TetMesh:
    """Immutable tetrahedral mesh with unique oriented faces and named face sets.

    Attributes:
        nodes: (N, 3) vertex coordinates.
        tets: (M, 4) node indices, all with positive signed volume.
        faces: (F, 3) node indices of unique triangles (canonical winding).
        tet_faces: (M, 4) face index of each local tet face.
        tet_face_signs: (M, 4) +1 if the canonical normal is outward for the tet.
        face_tets: list of (tet, local_face) pairs adjacent to each face.
        boundary_sets: name -> array of face indices.
        reoriented: number of tets flipped to positive volume on construction.
    """

    def __init__(self, nodes, tets, face_sets=None):
        self.nodes = np.asarray(nodes, dtype=float)
        tets = np.asarray(tets, dtype=int)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise TopologyError("nodes must be an (N, 3) array")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise TopologyError("tets must be an (M, 4) array")
        if tets.size and (tets.min() < 0 or tets.max() >= len(self.nodes)):
            raise TopologyError("tet node index out of range")

        tets = tets.copy()
        vols = self._signed_volumes(self.nodes, tets)
        scale = max(np.abs(vols).max(), 1.0) if len(vols) else 1.0
        degenerate = np.abs(vols) <= 1e-14 * scale
        if degenerate.any():
            raise TopologyError(f"zero-volume tet at index {int(np.argmax(degenerate))}")
        flip = vols < 0.0
        tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
        self.reoriented = int(flip.sum())
        self.tets = tets

        self._build_faces()
        self._build_frames()

        self.boundary_sets = {}
        if face_sets:
            for name, triples in face_sets.items():
                self.boundary_sets[name] = np.array(
                    sorted(self.face_index(t) for t in triples), dtype=int
                )

    # -- topology -------------------------------------------------------

    @staticmethod
    def _signed_volumes(nodes, tets):
        a = nodes[tets[:, 1]] - nodes[tets[:, 0]]
        b = nodes[tets[:, 2]] - nodes[tets[:, 0]]
        c = nodes[tets[:, 3]] - nodes[tets[:, 0]]
        return np.einsum("ij,ij->i", np.cross(a, b), c) / 6.0

    def _build_faces(self):
        face_key = {}
        faces = []
        face_tets = []
        self.tet_faces = np.empty((len(self.tets), 4), dtype=int)
        self.tet_face_signs = np.empty((len(self.tets), 4), dtype=int)
        for t, tet in enumerate(self.tets):
            for lf, (a, b, c) in enumerate(_TET_FACES):
                tri = (tet[a], tet[b], tet[c])
                key = tuple(sorted(tri))
                fi = face_key.get(key)
                if fi is None:
                    fi = len(faces)
                    face_key[key] = fi
                    # canonical winding: ascending node indices
                    faces.append(key)
                    face_tets.append([])
                elif len(face_tets[fi]) >= 2:
                    raise TopologyError(f"face {key} shared by more than two tets")
                sign = 1 if self._same_cycle(faces[fi], tri) else -1
                face_tets[fi].append((t, lf))
                self.tet_faces[t, lf] = fi
                self.tet_face_signs[t, lf] = sign
        self.faces = np.array(faces, dtype=int).reshape(-1, 3)
        self.face_tets = face_tets
        self._face_key = face_key
        for fi, adj in enumerate(face_tets):
            if len(adj) == 2:
                s = [self.tet_face_signs[t, lf] for t, lf in adj]
                if s[0] == s[1]:
                    raise TopologyError(
                        f"face {tuple(self.faces[fi])} seen twice from the same side"
                    )

    @staticmethod
    def _same_cycle(a, b):
        return tuple(b) in {
            (a[0], a[1], a[2]),
            (a[1], a[2], a[0]),
            (a[2], a[0], a[1]),
        }

    def face_index(self, triple) -> int:
        key = tuple(sorted(int(v) for v in triple))
        try:
            return self._face_key[key]
        except KeyError:
            raise TopologyError(f"no face with vertices {key}") from None

    # -- geometry -------------------------------------------------------

    def _build_frames(self):
        v = self.nodes[self.faces]  # (F, 3, 3)
        self.face_origin = v.mean(axis=1)
        cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        nrm = np.linalg.norm(cross, axis=1)
        self.face_area = 0.5 * nrm
        edge = np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        bad = nrm <= 1e-14 * np.maximum(edge, 1.0) ** 2
        if bad.any():
            raise DegenerateFace(f"face {int(np.argmax(bad))} has zero area")
        self.face_normal = cross / nrm[:, None]
        # e1 along the edge from the lowest-index to the next-lowest-index vertex
        order = np.argsort(self.faces, axis=1)
        lo = self.nodes[np.take_along_axis(self.faces, order[:, :1], axis=1)[:, 0]]
        nx = self.nodes[np.take_along_axis(self.faces, order[:, 1:2], axis=1)[:, 0]]
        e1 = nx - lo
        e1 /= np.linalg.norm(e1, axis=1)[:, None]
        # project out any normal component from roundoff, then complete the triad
        e1 -= np.einsum("ij,ij->i", e1, self.face_normal)[:, None] * self.face_normal
        e1 /= np.linalg.norm(e1, axis=1)[:, None]
        self.face_e1 = e1
        self.face_e2 = np.cross(self.face_normal, e1)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def tet_volume(self, t: int) -> float:
        return float(self._signed_volumes(self.nodes, self.tets[t : t + 1])[0])

    def boundary_faces(self) -> np.ndarray:
        return np.array(
            [i for i, adj in enumerate(self.face_tets) if len(adj) == 1], dtype=int
        )

    def face_local_coords(self, face: int, points: np.ndarray) -> np.ndarray:
        """Map reference-triangle parametric points to face-local (X1~, X2~) coords."""
        v = self.nodes[self.faces[face]]
        xyz = (
            v[0][None, :] * (1.0 - points[:, :1] - points[:, 1:2])
            + v[1][None, :] * points[:, :1]
            + v[2][None, :] * points[:, 1:2]
        )
        rel = xyz - self.face_origin[face]
        return np.column_stack([rel @ self.face_e1[face], rel @ self.face_e2[face]]), xyz


def face_frame(mesh: TetMesh, face: int) -> FaceFrame:
    """Face-local orthonormal frame (origin at the face geometric center)."""
    if not 0 <= face < mesh.n_faces:
        raise IndexError(f"face index {face} out of range")
    return FaceFrame(
        origin=mesh.face_origin[face].copy(),
        e1=mesh.face_e1[face].copy(),
        e2=mesh.face_e2[face].copy(),
        normal=mesh.face_normal[face].copy(),
        area=float(mesh.face_area[face]),
    )


def closed_surface_moment(mesh: TetMesh, tet: int, quad_degree: int = 4) -> np.ndarray:
    """Spin-matrix of the boundary integral of N x X over a tet surface.

    Uses outward normals per face; vanishes for any closed surface, which is
    the divergence-theorem identity underpinning the best-fit rotor.  Returned
    as the antisymmetric 3x3 matrix Spin[integral] so a broken closure shows
    up as nonzero entries.
    """
    from .so3 import spin

    if not 0 <= tet < len(mesh.tets):
        raise IndexError(f"tet index {tet} out of range")
    rule = triangle_rule(quad_degree)
    moment = np.zeros(3)
    for lf in range(4):
        fi = mesh.tet_faces[tet, lf]
        sign = mesh.tet_face_signs[tet, lf]
        _, xyz = mesh.face_local_coords(fi, rule.points)
        # weights scale by 2*area (reference triangle has area 1/2)
        w = rule.weights * (2.0 * mesh.face_area[fi])
        n = sign * mesh.face_normal[fi]
        moment += np.cross(n, xyz.T @ w)
    return spin(moment)


# -- file formats -------------------------------------------------------


def load_mesh(path, format: str = "native-ascii") -> TetMesh:
    """Read a mesh file in the native ASCII or Gmsh v2 ASCII format."""
    with open(path) as f:
        lines = f.read().splitlines()
    if format == "native-ascii":
        return _parse_native(lines)
    if format == "gmsh-v2":
        return _parse_gmsh2(lines)
    raise ParseError(f"unknown mesh format {format!r}")


def _parse_native(lines) -> TetMesh:
    nodes, tets, face_sets = [], [], {}
    i = 0
    try:
        while i < len(lines):
            tok = lines[i].strip()
            if tok == "$Nodes":
                count = int(lines[i + 1])
                for k in range(count):
                    parts = lines[i + 2 + k].split()
                    if len(parts) != 4:
                        raise ParseError("expected 'id x y z'", line=i + 3 + k)
                    nodes.append([float(p) for p in parts[1:]])
                i += 2 + count
            elif tok == "$Tets":
                count = int(lines[i + 1])
                for k in range(count):
                    parts = lines[i + 2 + k].split()
                    if len(parts) != 5:
                        raise ParseError("expected 'id n1 n2 n3 n4'", line=i + 3 + k)
                    tets.append([int(p) - 1 for p in parts[1:]])
                i += 2 + count
            elif tok == "$FaceSets":
                nsets = int(lines[i + 1])
                i += 2
                for _ in range(nsets):
                    name, nfaces = lines[i].split()
                    triples = []
                    for k in range(int(nfaces)):
                        parts = lines[i + 1 + k].split()
                        if len(parts) != 3:
                            raise ParseError("expected 'n1 n2 n3'", line=i + 2 + k)
                        triples.append(tuple(int(p) - 1 for p in parts))
                    face_sets[name] = triples
                    i += 1 + int(nfaces)
            else:
                i += 1
    except (ValueError, IndexError) as exc:
        raise ParseError(str(exc), line=i + 1) from exc
    if not nodes or not tets:
        raise ParseError("mesh file has no $Nodes or $Tets section")
    return TetMesh(np.array(nodes), np.array(tets), face_sets)


def _parse_gmsh2(lines) -> TetMesh:
    nodes, tets = [], []
    phys_names = {}
    tri_by_tag: dict[int, list] = {}
    node_ids = {}
    i = 0
    try:
        while i < len(lines):
            tok = lines[i].strip()
            if tok == "$PhysicalNames":
                count = int(lines[i + 1])
                for k in range(count):
                    parts = lines[i + 2 + k].split(None, 2)
                    phys_names[int(parts[1])] = parts[2].strip().strip('"')
                i += 2 + count
            elif tok == "$Nodes":
                count = int(lines[i + 1])
                for k in range(count):
                    parts = lines[i + 2 + k].split()
                    node_ids[int(parts[0])] = len(nodes)
                    nodes.append([float(p) for p in parts[1:4]])
                i += 2 + count
            elif tok == "$Elements":
                count = int(lines[i + 1])
                for k in range(count):
                    parts = [int(p) for p in lines[i + 2 + k].split()]
                    etype, ntags = parts[1], parts[2]
                    conn = parts[3 + ntags :]
                    tag = parts[3] if ntags else 0
                    if etype == 4:
                        tets.append([node_ids[n] for n in conn])
                    elif etype == 2:
                        tri_by_tag.setdefault(tag, []).append(
                            tuple(node_ids[n] for n in conn)
                        )
                i += 2 + count
            else:
                i += 1
    except (ValueError, IndexError, KeyError) as exc:
        raise ParseError(str(exc), line=i + 1) from exc
    if not tets:
        raise ParseError("gmsh file contains no tetrahedra (element type 4)")
    face_sets = {
        phys_names.get(tag, f"physical_{tag}"): tris for tag, tris in tri_by_tag.items()
    }
    return TetMesh(np.array(nodes), np.array(tets), face_sets)


def write_native(path, nodes, tets, face_sets) -> None:
    """Write the native ASCII format (1-based indices, diffable fixed layout)."""
    with open(path, "w") as f:
        f.write("$Nodes\n%d\n" % len(nodes))
        for i, p in enumerate(nodes):
            f.write("%d %.17g %.17g %.17g\n" % (i + 1, p[0], p[1], p[2]))
        f.write("$EndNodes\n$Tets\n%d\n" % len(tets))
        for i, t in enumerate(tets):
            f.write("%d %d %d %d %d\n" % (i + 1, t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1))
        f.write("$EndTets\n$FaceSets\n%d\n" % len(face_sets))
        for name, triples in face_sets.items():
            f.write("%s %d\n" % (name, len(triples)))
            for tri in triples:
                f.write("%d %d %d\n" % (tri[0] + 1, tri[1] + 1, tri[2] + 1))
        f.write("$EndFaceSets\n")


# -- structured generators ---------------------------------------------

_KUHN_PERMS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


def _grid_tets(nx, ny, nz):
    """Kuhn 6-tet split of a structured grid; conforming across cells."""

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = np.array([i, j, k])
                for perm in _KUHN_PERMS:
                    path = [c.copy()]
                    for ax in perm:
                        nxt = path[-1].copy()
                        nxt[ax] += 1
                        path.append(nxt)
                    tets.append([nid(*p) for p in path])
    return tets


def _grid_nodes(nx, ny, nz):
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    zs = np.linspace(0.0, 1.0, nz + 1)
    nodes = np.array([[x, y, z] for x in xs for y in ys for z in zs])
    return nodes


def _grid_boundary_tris(nodes_idx, nx, ny, nz):
    """Vertex triples of the boundary quads split consistently with the Kuhn tets."""

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    sets = {"xmin": [], "xmax": [], "ymin": [], "ymax": [], "zmin": [], "zmax": []}
    for j in range(ny):
        for k in range(nz):
            for q in _quad_tris(nid(0, j, k), nid(0, j + 1, k), nid(0, j, k + 1), nid(0, j + 1, k + 1)):
                sets["xmin"].append(q)
            for q in _quad_tris(nid(nx, j, k), nid(nx, j + 1, k), nid(nx, j, k + 1), nid(nx, j + 1, k + 1)):
                sets["xmax"].append(q)
    for i in range(nx):
        for k in range(nz):
            for q in _quad_tris(nid(i, 0, k), nid(i + 1, 0, k), nid(i, 0, k + 1), nid(i + 1, 0, k + 1)):
                sets["ymin"].append(q)
            for q in _quad_tris(nid(i, ny, k), nid(i + 1, ny, k), nid(i, ny, k + 1), nid(i + 1, ny, k + 1)):
                sets["ymax"].append(q)
    for i in range(nx):
        for j in range(ny):
            for q in _quad_tris(nid(i, j, 0), nid(i + 1, j, 0), nid(i, j + 1, 0), nid(i + 1, j + 1, 0)):
                sets["zmin"].append(q)
            for q in _quad_tris(nid(i, j, nz), nid(i + 1, j, nz), nid(i, j + 1, nz), nid(i + 1, j + 1, nz)):
                sets["zmax"].append(q)
    return sets


def _quad_tris(a, b, c, d):
    # quad with corners a=(0,0), b=(1,0), c=(0,1), d=(1,1); Kuhn diagonal a-d
    return [(a, b, d), (a, d, c)]


def generate_beam(nx=2, ny=2, nz=25, width=0.2, height=0.2, length=5.0):
    """Structured beam mesh centered at the origin with the long axis along z.

    Returns (nodes, tets, face_sets) with end sets "left" (z = -L/2) and
    "right" (z = +L/2) and the lateral set "sides".
    """
    nodes = _grid_nodes(nx, ny, nz)
    nodes[:, 0] = (nodes[:, 0] - 0.5) * width
    nodes[:, 1] = (nodes[:, 1] - 0.5) * height
    nodes[:, 2] = (nodes[:, 2] - 0.5) * length
    tets = _grid_tets(nx, ny, nz)
    tris = _grid_boundary_tris(None, nx, ny, nz)
    face_sets = {
        "left": tris["zmin"],
        "right": tris["zmax"],
        "sides": tris["xmin"] + tris["xmax"] + tris["ymin"] + tris["ymax"],
    }
    return nodes, tets, face_sets


def generate_lattice(
    span=2.0,
    rise=0.15,
    thickness=0.05,
    width=0.05,
    nx=1,
    ny=1,
    nz=24,
    seed=0,
    jitter=0.0,
):
    """Shallow-arch strut mesh for snap-through studies.

    A structured beam is bent along a parabolic arc of the given rise.  Face
    sets: "bottom" holds both fixed end faces, "top" the loaded extrados
    faces of the middle third, "sides" the rest of the lateral surface.
    Interior nodes may be jittered (deterministic under `seed`).
    """
    nodes = _grid_nodes(nx, ny, nz)
    tets = _grid_tets(nx, ny, nz)
    tris = _grid_boundary_tris(None, nx, ny, nz)

    # parabolic arc in the (z, y) plane, cross-section carried normal to it
    zeta = (nodes[:, 2] - 0.5) * span
    xi = (nodes[:, 0] - 0.5) * width
    eta = (nodes[:, 1] - 0.5) * thickness
    yc = rise * (1.0 - (2.0 * zeta / span) ** 2)
    slope = rise * (-8.0 * zeta / span**2)
    tang = np.column_stack([np.zeros_like(zeta), slope, np.ones_like(zeta)])
    tang /= np.linalg.norm(tang, axis=1)[:, None]
    nrm = np.column_stack([np.zeros_like(zeta), tang[:, 2], -tang[:, 1]])
    base = np.column_stack([np.zeros_like(zeta), yc, zeta])
    pts = base + nrm * eta[:, None]
    pts[:, 0] = xi
    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        cell = min(width / max(nx, 1), thickness / max(ny, 1), span / max(nz, 1))
        interior = (nodes[:, 2] > 1e-12) & (nodes[:, 2] < 1.0 - 1e-12)
        delta = rng.uniform(-jitter * cell, jitter * cell, size=(len(pts), 3))
        pts[interior] += delta[interior]
    mid = [
        tri
        for tri, zc in zip(
            tris["ymax"],
            [np.mean([nodes[v, 2] for v in tri]) for tri in tris["ymax"]],
        )
        if 1.0 / 3.0 <= zc <= 2.0 / 3.0
    ]
    rest = [tri for tri in tris["ymax"] if tri not in mid]
    face_sets = {
        "bottom": tris["zmin"] + tris["zmax"],
        "top": mid,
        "sides": tris["xmin"] + tris["xmax"] + tris["ymin"] + rest,
    }
    return pts, tets, face_sets
