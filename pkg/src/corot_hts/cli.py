"""Command line interface: analysis runs and mesh generation.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import __version__
from .config import load_config, load_model
from .errors import ConfigError, CorotHtsError, ParseError
from .mesh import generate_beam, generate_lattice, write_native
from .solver import ArcLengthParams, run_arc_length, run_load_steps
from .vtk import write_vtk

CSV_COLUMNS = (
    "step",
    "lam",
    "arc",
    "dq_norm",
    "rotation_norm",
    "iterations",
    "residual",
    "energy",
)


@click.group()
@click.version_option(__version__)
def main():
    """Co-rotational hybrid Trefftz stress solver."""


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--check", is_flag=True, help="Validate, print DOF counts, exit.")
@click.option("--verbose", is_flag=True, help="Per-iteration log output.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="Bound on element-level worker threads.")
def run(config_path, check, verbose, threads):
    """Run the analysis described by CONFIG_PATH."""
    try:
        config = load_config(config_path)
        mesh, model = load_model(config)
    except (ConfigError, ParseError, CorotHtsError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)

    if threads < 1:
        click.echo("config error: --threads must be >= 1", err=True)
        sys.exit(2)
    model.threads = threads

    if check:
        click.echo(f"mesh: {len(mesh.nodes)} nodes, {len(mesh.tets)} tets, "
                   f"{mesh.n_faces} faces")
        click.echo(f"displacement DOFs: {model.dofmap.n_dofs} "
                   f"({len(model.fixed_dofs)} constrained)")
        click.echo(f"stress DOFs: {len(model.caches) * model.k} (condensed)")
        click.echo("config OK")
        sys.exit(0)

    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    log = _setup_log(outdir / "run.log", verbose)
    log.info("corot-hts %s starting, config %s", __version__, config_path)
    log.info("%d tets, %d displacement DOFs, %d threads",
             len(mesh.tets), model.dofmap.n_dofs, threads)

    state = model.initial_state()
    records = []
    t0 = time.time()

    def on_step(st, rec):
        records.append(rec)
        log.info("step %d: lam=%.6g iters=%d residual=%.3e",
                 rec.step, rec.lam, rec.iterations, rec.residual)
        if verbose:
            for i, r in enumerate(rec.trace.residual_norms):
                log.debug("  it %d residual %.6e", i, r)
        if config.vtk_every and rec.step % config.vtk_every == 0:
            write_vtk(outdir / f"step_{rec.step:04d}.vtk", model, st,
                      comment=f"lam={rec.lam:.6g}")

    try:
        if config.stepping_mode == "load":
            run_load_steps(
                model, state, config.lam_values,
                tol_r=config.tol_r, tol_q=config.tol_q,
                max_iter=config.max_iter, callback=on_step,
            )
        else:
            params = ArcLengthParams(
                s=config.arc_s, psi=config.arc_psi,
                tol_r=config.tol_r, max_iter=config.max_iter,
            )
            run_arc_length(model, state, params, config.arc_steps,
                           callback=on_step)
    except CorotHtsError as exc:
        log.error("solver failure after %d converged steps: %s",
                  len(records), exc)
        _write_outputs(outdir, config, records, converged=False, error=str(exc))
        sys.exit(3)

    log.info("completed %d steps in %.1fs, final lam=%.6g",
             len(records), time.time() - t0, state.lam)
    _write_outputs(outdir, config, records, converged=True)
    sys.exit(0)


def _setup_log(path, verbose):
    log = logging.getLogger("corot_hts")
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.handlers.clear()
    fh = logging.FileHandler(path, mode="w")
    sh = logging.StreamHandler()
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(message)s")
    for h in (fh, sh):
        h.setFormatter(fmt)
        log.addHandler(h)
    return log


def _write_outputs(outdir, config, records, converged, error=None):
    with open(outdir / "path.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([
                rec.step, f"{rec.lam:.12g}", f"{rec.arc:.12g}",
                f"{rec.dq_norm:.12g}", f"{rec.rotation_norm:.12g}",
                rec.iterations, f"{rec.residual:.12g}", f"{rec.energy:.12g}",
            ])
    summary = {
        "converged": converged,
        "steps": len(records),
        "final_lam": records[-1].lam if records else 0.0,
        "final_energy": records[-1].energy if records else 0.0,
        "max_iterations": max((r.iterations for r in records), default=0),
        "max_residual": max((r.residual for r in records), default=0.0),
        "stepping_mode": config.stepping_mode,
    }
    if error is not None:
        summary["error"] = error
    with open(outdir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    if records:
        _render_figures(outdir, records)


def _render_figures(outdir, records):
    lams = [r.lam for r in records]
    rots = [r.rotation_norm for r in records]
    dqs = [r.dq_norm for r in records]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rots, lams, "o-")
    ax.set_xlabel("accumulated rotation norm")
    ax.set_ylabel("load factor")
    ax.set_title("equilibrium path")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(outdir / "path.png", dpi=150)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for rec in records:
        ax.semilogy(rec.trace.residual_norms, alpha=0.6)
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual norm")
    ax.set_title(f"convergence ({len(records)} steps, "
                 f"max dq {max(dqs):.3g})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(outdir / "convergence.png", dpi=150)
    plt.close(fig)


@main.group()
def mesh():
    """Generate native mesh files."""


@mesh.command()
@click.option("--nx", default=2, show_default=True)
@click.option("--ny", default=2, show_default=True)
@click.option("--nz", default=25, show_default=True)
@click.option("--width", default=0.2, show_default=True)
@click.option("--height", default=0.2, show_default=True)
@click.option("--length", default=5.0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path())
def beam(nx, ny, nz, width, height, length, output):
    """Structured beam with end face sets 'left' and 'right'."""
    if min(nx, ny, nz) < 1 or min(width, height, length) <= 0:
        click.echo("config error: cell counts must be >= 1 and "
                   "dimensions positive", err=True)
        sys.exit(2)
    nodes, tets, sets = generate_beam(nx, ny, nz, width, height, length)
    write_native(output, nodes, tets, sets)
    click.echo(f"wrote {output}: {len(nodes)} nodes, {len(tets)} tets")


@mesh.command()
@click.option("--span", default=2.0, show_default=True)
@click.option("--rise", default=0.15, show_default=True)
@click.option("--thickness", default=0.05, show_default=True)
@click.option("--width", default=0.05, show_default=True)
@click.option("--nx", default=1, show_default=True)
@click.option("--ny", default=1, show_default=True)
@click.option("--nz", default=24, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--jitter", default=0.0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path())
def lattice(span, rise, thickness, width, nx, ny, nz, seed, jitter, output):
    """Shallow-arch strut mesh with 'top', 'bottom' and 'sides' sets."""
    if min(nx, ny, nz) < 1 or min(span, thickness, width) <= 0 or jitter < 0:
        click.echo("config error: invalid lattice parameters", err=True)
        sys.exit(2)
    nodes, tets, sets = generate_lattice(
        span, rise, thickness, width, nx, ny, nz, seed, jitter
    )
    write_native(output, nodes, tets, sets)
    click.echo(f"wrote {output}: {len(nodes)} nodes, {len(tets)} tets")


if __name__ == "__main__":
    main()
