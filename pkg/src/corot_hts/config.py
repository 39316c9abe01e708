"""YAML solver configuration: schema, validation, and model construction.

The schema is documented in the README; every validation failure raises
ConfigError with the dotted path of the offending field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .element import BoundaryData
from .errors import ConfigError
from .mesh import TetMesh, load_mesh
from .oracles import bending_reference


@dataclass
class BoundaryBlock:
    """One boundary condition: a face set with either tractions or displacements."""

    set_name: str
    kind: str  # "traction" or "displacement"
    components: list = field(default_factory=lambda: [True, True, True])
    vector: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    profile: str = "constant"
    length: float = 0.0
    curvature: float = 0.0
    width: float = 1.0
    height: float = 1.0


@dataclass
class SolverConfig:
    """Validated run description; `build_model` turns it into solver objects."""

    mesh_path: str
    mesh_format: str
    E: float
    nu: float
    displacement_order: int
    stress_order: int
    boundary: list
    stepping_mode: str  # "load" or "arc"
    lam_values: list
    arc_s: float
    arc_psi: float
    arc_steps: int
    tol_r: float
    tol_q: float
    max_iter: int
    output_dir: str
    vtk_every: int


def _require(mapping, key, path, types=None):
    if key not in mapping:
        raise ConfigError(f"missing field {path}.{key}")
    val = mapping[key]
    if types is not None and not isinstance(val, types):
        raise ConfigError(f"field {path}.{key} has wrong type")
    return val


def load_config(path) -> SolverConfig:
    """Parse and validate a YAML config file."""
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    mesh = _require(raw, "mesh", "", dict)
    material = _require(raw, "material", "", dict)
    E = float(_require(material, "E", "material", (int, float)))
    nu = float(_require(material, "nu", "material", (int, float)))
    if E <= 0.0:
        raise ConfigError("field material.E must be positive")
    if not -1.0 < nu < 0.5:
        raise ConfigError("field material.nu must lie in (-1, 0.5)")

    disc = raw.get("discretization", {})
    p = int(disc.get("displacement_order", 2))
    d = int(disc.get("stress_order", 3))
    if p not in (1, 2):
        raise ConfigError("field discretization.displacement_order must be 1 or 2")
    if d not in (1, 2, 3):
        raise ConfigError("field discretization.stress_order must be 1, 2 or 3")

    blocks = []
    bc_raw = _require(raw, "boundary", "", list)
    for i, entry in enumerate(bc_raw):
        path_i = f"boundary[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{path_i} must be a mapping")
        kind = _require(entry, "type", path_i, str)
        if kind not in ("traction", "displacement"):
            raise ConfigError(f"{path_i}.type must be 'traction' or 'displacement'")
        profile = entry.get("profile", "constant")
        if profile not in ("constant", "bending-end"):
            raise ConfigError(f"{path_i}.profile must be 'constant' or 'bending-end'")
        block = BoundaryBlock(
            set_name=_require(entry, "set", path_i, str),
            kind=kind,
            components=[bool(c) for c in entry.get("components", [1, 1, 1])],
            vector=[float(v) for v in entry.get("vector", [0.0, 0.0, 0.0])],
            profile=profile,
            length=float(entry.get("length", 0.0)),
            curvature=float(entry.get("curvature", 0.0)),
            width=float(entry.get("width", 1.0)),
            height=float(entry.get("height", 1.0)),
        )
        if len(block.components) != 3 or len(block.vector) != 3:
            raise ConfigError(f"{path_i}: components and vector must have 3 entries")
        if block.profile == "bending-end" and (block.length <= 0 or block.curvature <= 0):
            raise ConfigError(
                f"{path_i}: bending-end profile needs positive length and curvature"
            )
        blocks.append(block)

    stepping = _require(raw, "stepping", "", dict)
    mode = _require(stepping, "mode", "stepping", str)
    if mode not in ("load", "arc"):
        raise ConfigError("field stepping.mode must be 'load' or 'arc'")
    lam_values, arc_s, arc_psi, arc_steps = [], 0.0, 0.0, 0
    if mode == "load":
        lam_values = [float(v) for v in _require(stepping, "lam_values", "stepping", list)]
        if not lam_values or any(
            b <= a for a, b in zip([0.0] + lam_values, lam_values)
        ):
            raise ConfigError("field stepping.lam_values must be positive and increasing")
    else:
        arc_s = float(_require(stepping, "s", "stepping", (int, float)))
        arc_steps = int(_require(stepping, "steps", "stepping", int))
        arc_psi = float(stepping.get("psi", 0.0))
        if arc_s <= 0 or arc_steps <= 0:
            raise ConfigError("fields stepping.s and stepping.steps must be positive")

    tols = raw.get("tolerances", {})
    out = raw.get("output", {})
    return SolverConfig(
        mesh_path=str(_require(mesh, "path", "mesh", str)),
        mesh_format=str(mesh.get("format", "native-ascii")),
        E=E,
        nu=nu,
        displacement_order=p,
        stress_order=d,
        boundary=blocks,
        stepping_mode=mode,
        lam_values=lam_values,
        arc_s=arc_s,
        arc_psi=arc_psi,
        arc_steps=arc_steps,
        tol_r=float(tols.get("tol_r", 1e-9)),
        tol_q=float(tols.get("tol_q", 1e-12)),
        max_iter=int(tols.get("max_iter", 25)),
        output_dir=str(out.get("directory", "out")),
        vtk_every=int(out.get("vtk_every", 1)),
    )


def _traction_fn(block: BoundaryBlock):
    vec = np.asarray(block.vector, dtype=float)

    def fn(X, lam):
        return np.tile(lam * vec, (len(X), 1))

    return fn


def _displacement_fn(block: BoundaryBlock):
    if block.profile == "bending-end":
        L, b, h = block.length, block.width, block.height
        kappa = block.curvature

        def fn(X, lam):
            ref = bending_reference(L, b, h, E=1.0, kappa=lam * kappa)
            return ref.displacement(X)

        return fn

    vec = np.asarray(block.vector, dtype=float)

    def fn(X, lam):
        return np.tile(lam * vec, (len(X), 1))

    return fn


def resolve_boundary(config: SolverConfig, mesh: TetMesh) -> BoundaryData:
    """Check face set references and build per-face boundary data."""
    tractions, displacements = {}, {}
    for i, block in enumerate(config.boundary):
        if block.set_name not in mesh.boundary_sets:
            raise ConfigError(
                f"boundary[{i}]: unknown face set '{block.set_name}'"
            )
        if block.kind == "traction":
            tractions[block.set_name] = _traction_fn(block)
        else:
            displacements[block.set_name] = (
                _displacement_fn(block),
                block.components,
            )
    return BoundaryData.from_sets(
        mesh, tractions=tractions, displacements=displacements
    )


def load_model(config: SolverConfig):
    """Build (mesh, model) for a validated configuration."""
    from .solver import Model

    mesh = load_mesh(config.mesh_path, config.mesh_format)
    boundary = resolve_boundary(config, mesh)
    model = Model(
        mesh,
        E=config.E,
        nu=config.nu,
        stress_order=config.stress_order,
        displacement_order=config.displacement_order,
        boundary=boundary,
    )
    return mesh, model
