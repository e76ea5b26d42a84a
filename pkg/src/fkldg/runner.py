"""Run a configuration end to end and write its artifacts; convergence sweeps."""

from __future__ import annotations

import logging
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .simulation import RunConfig, RunResult, simulate

logger = logging.getLogger(__name__)

ERROR_COLUMNS = ["scenario", "n_cells", "h", "degree", "nu", "tau", "T", "epsilon", "E_c", "E_sigma", "dg_norm_w", "mass", "entropy", "min_u", "max_u"]
NEWTON_COLUMNS = ["step", "iteration", "increment", "residual", "linear_iterations"]
SWEEP_AXES = {"h": "n_cells", "ell": "degree", "tau": "tau", "eps": "epsilon"}


def error_row(res: RunResult) -> dict:
    cfg = res.config
    row = {
        "scenario": cfg.scenario,
        "n_cells": res.disc.mesh.n_cells,
        "h": res.disc.mesh.h,
        "degree": cfg.degree,
        "nu": cfg.nu,
        "tau": cfg.tau,
        "T": res.time,
        "epsilon": cfg.epsilon,
        "min_u": res.min_u,
        "max_u": res.max_u,
    }
    if res.errors is not None:
        e = res.errors.as_dict()
        # the run-wide extremes are kept; the report's own values only cover t = T
        for k in ("E_c", "E_sigma", "dg_norm_w", "mass", "entropy"):
            row[k] = e[k]
    return row


def newton_rows(res: RunResult) -> list[dict]:
    rows = []
    for step, tr in res.traces:
        for i, (inc, r, li) in enumerate(zip(tr.increments, tr.residuals, tr.linear_iters)):
            rows.append({"step": step, "iteration": i + 1, "increment": inc, "residual": r, "linear_iterations": li})
    return rows


def write_outputs(res: RunResult, out_dir, figures: bool = True) -> dict:
    """Write CSVs, snapshots, VTK files and figures into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = res.config
    space = res.disc.space
    io.write_json(out / "resolved-config.json", cfg.to_dict())
    io.save_mesh(res.disc.mesh, out / "mesh.json")
    io.write_csv(out / "errors.csv", [error_row(res)], ERROR_COLUMNS)
    ledger_rows = res.ledger.rows()
    io.write_csv(out / "ledger.csv", ledger_rows, list(ledger_rows[0].keys()) if ledger_rows else ["step"])
    cent = space.centers
    act_rows = [
        {"cell": k, "x": cent[k, 0], "y": cent[k, 1], "label": "" if res.disc.mesh.cell_labels is None else int(res.disc.mesh.cell_labels[k]), "activation_time": res.activation[k]}
        for k in range(space.n_cells)
    ]
    io.write_csv(out / "activation.csv", act_rows, ["cell", "x", "y", "label", "activation_time"])
    io.write_csv(out / "newton.csv", newton_rows(res), NEWTON_COLUMNS)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    snaps = res.snapshots or [(res.steps, res.time, res.W)]
    for step, t, W in snaps:
        sigma = res.Sigma if step == res.steps else None
        io.write_snapshot(snap_dir / f"step{step:06d}.json", space, W, sigma, step, t)
        if cfg.vtk:
            io.write_vtk(snap_dir / f"step{step:06d}.vtk", space, W, cfg.sample_level, title=f"{cfg.scenario} t={t!r}")
    if cfg.dump_matrices:
        io.dump_matrices(cfg.dump_matrices, res.disc.sys.matrices())
    written = {"dir": str(out)}
    if figures:
        from . import plotting

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plotting.plot_mesh(res.disc.mesh, fig_dir / "mesh.png")
        plotting.plot_solution(space, res.W, fig_dir / "solution.png", title=f"u(w_h) at t = {res.time:.4g}")
        if ledger_rows:
            plotting.plot_ledger(ledger_rows, fig_dir / "ledger.png")
        plotting.plot_cell_field(res.disc.mesh, res.activation, fig_dir / "activation.png", f"activation time, c_crit = {cfg.c_crit}", "t")
        written["figures"] = str(fig_dir)
    return written


def run(cfg: RunConfig, figures: bool = True) -> RunResult:
    """Simulate ``cfg`` and, when it names an output directory, write every artifact."""
    res = simulate(cfg)
    if cfg.output_dir:
        write_outputs(res, cfg.output_dir, figures=figures)
    return res


def exit_status(res: RunResult) -> int:
    """0 on success, 3 when a backward Euler run breaks the entropy inequality, 4 on a bound violation."""
    if not res.positive:
        return 4
    if res.config.nu == 1 and res.ledger.violated:
        return 3
    return 0


# -- sweeps -------------------------------------------------------------------------------


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def convergence_sweep(base: RunConfig, axis: str, values, out_csv=None, window: int = 3) -> list[dict]:
    """Run ``base`` for each value along ``axis`` and fit log-log rates.

    The abscissa is the mesh size h for the ``h`` axis (values are cell
    counts), the degree for ``ell``, the step for ``tau`` and epsilon for
    ``eps``. For ``eps`` an extra run with epsilon = 0 provides the baseline
    and the fitted quantity is the degradation E_c(eps) - E_c(0). Each row's
    ``rate_*`` is the slope over the last ``window`` rows ending there. Rows
    are written after every sub-run so a failure leaves partial results.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    key = SWEEP_AXES[axis]
    cast = int if key in ("n_cells", "degree") else float
    values = [cast(v) for v in values]
    rows: list[dict] = []
    baseline = None
    if axis == "eps":
        baseline = simulate(replace(base, epsilon=0.0, output_dir=None)).errors.E_c

    def flush():
        if out_csv is not None:
            cols = ["axis", "value", "abscissa", "h", "E_c", "E_sigma", "E_c_degradation", "rate_c", "rate_sigma", "newton_iterations"]
            io.write_csv(out_csv, rows, cols)

    for v in values:
        cfg = replace(base, output_dir=None, **{key: v})
        try:
            res = simulate(cfg)
        except Exception:
            flush()
            raise
        if res.errors is None:
            raise ValueError("convergence sweeps need a scenario with an exact solution")
        absc = {"h": res.disc.mesh.h, "ell": float(v), "tau": float(v), "eps": float(v)}[axis]
        row = {
            "axis": axis,
            "value": v,
            "abscissa": absc,
            "h": res.disc.mesh.h,
            "E_c": res.errors.E_c,
            "E_sigma": res.errors.E_sigma,
            "E_c_degradation": abs(res.errors.E_c - baseline) if baseline is not None else None,
            "newton_iterations": res.newton_iterations,
        }
        rows.append(row)
        tail = rows[-window:]
        xs = [r["abscissa"] for r in tail]
        if len(tail) >= 2:
            target = "E_c_degradation" if baseline is not None else "E_c"
            row["rate_c"] = loglog_slope(xs, [r[target] for r in tail])
            row["rate_sigma"] = loglog_slope(xs, [r["E_sigma"] for r in tail])
        flush()
        logger.info("sweep %s=%s E_c=%.3e", axis, v, res.errors.E_c)
    return rows
