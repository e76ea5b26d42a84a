"""Error norms, structural monitors and activation times."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dgspace import DgSpace, triangulate
from .entropy import NonlinearOps, reaction_constant, s_entropy, u_complement, u_eval
from .ldg import LdgSystem


@dataclass
class ErrorReport:
    E_c: float
    E_sigma: float
    dg_norm_w: float
    mass: float
    entropy: float
    min_u: float
    max_u: float

    def as_dict(self) -> dict:
        return asdict(self)


def error_norms(space: DgSpace, W, Sigma, exact_c, exact_grad_c, t: float, sys: LdgSystem | None = None) -> ErrorReport:
    """L2 errors of u(w_h) against c and of sigma_h against -grad c at time ``t``.

    ``sigma_h`` approximates ``-grad c``, so E_sigma integrates ``|grad c + sigma_h|^2``.
    """
    x, y = space.qpts[..., 0], space.qpts[..., 1]
    w = space.values_at_quad(W)
    u = u_eval(w)
    E_c = np.sqrt(space.integrate((exact_c(x, y, t) - u) ** 2))
    gx, gy = exact_grad_c(x, y, t)
    sig = space.vector_values_at_quad(Sigma)
    E_s = np.sqrt(space.integrate((gx + sig[..., 0]) ** 2 + (gy + sig[..., 1]) ** 2))
    dg = float(np.sqrt(max(W @ (sys.A_LDG @ W), 0.0))) if sys is not None else float("nan")
    lo, hi, *_ = positivity_scan(space, W)
    return ErrorReport(
        E_c=float(E_c),
        E_sigma=float(E_s),
        dg_norm_w=dg,
        mass=space.integrate(u),
        entropy=space.integrate(s_entropy(u)),
        min_u=lo,
        max_u=hi,
    )


# -- sampling --------------------------------------------------------------------


def sample_points(space: DgSpace, level: int | None = None):
    """Subdivision points of each cell's centroid fan, plus the quadrature points.

    Returns ``(cells, points)`` with one cell index per point. Each fan
    triangle is sampled on the barycentric lattice with ``level`` segments
    per edge (default ell + 1).
    """
    level = space.degree + 1 if level is None else int(level)
    if level < 1:
        raise ValueError("sampling level must be at least 1")
    i, j = np.meshgrid(np.arange(level + 1), np.arange(level + 1), indexing="ij")
    keep = i + j <= level
    bary = np.stack([i[keep], j[keep]], axis=1) / level
    cells, pts = [], []
    for k in range(space.n_cells):
        poly = space.mesh.cell_points(k)
        for a, b, c in triangulate(poly, space.centers[k]):
            p = a + np.outer(bary[:, 0], b - a) + np.outer(bary[:, 1], c - a)
            pts.append(p)
            cells.append(np.full(len(p), k))
        nq = int((space.qw[k] > 0).sum())
        pts.append(space.qpts[k, :nq])
        cells.append(np.full(nq, k))
    return np.concatenate(cells), np.vstack(pts)


def positivity_scan(space: DgSpace, W, level: int | None = None):
    """Extremes of u(w_h) over the quadrature and subdivision sample points.

    Returns ``(min_u, max_u, argmin, argmax, min_gap)`` where the arg entries
    are ``(cell, point)`` pairs and ``min_gap`` is the smallest value of
    ``1 - u`` computed without cancellation (``max_u`` itself may round to 1
    in floating point when w is very large).
    """
    cells, pts = sample_points(space, level)
    w = space.eval_cells(W, cells, pts)
    if not np.all(np.isfinite(w)):
        bad = int(cells[np.flatnonzero(~np.isfinite(w))[0]])
        raise FloatingPointError(f"non-finite entropy variable in cell {bad}")
    u = u_eval(w)
    gap = u_complement(w)
    i0, i1 = int(np.argmin(u)), int(np.argmax(u))
    return (
        float(u[i0]),
        float(u[i1]),
        (int(cells[i0]), pts[i0].copy()),
        (int(cells[i1]), pts[i1].copy()),
        float(gap.min()),
    )


def strictly_inside(scan) -> bool:
    """True when the positivity scan lies strictly inside (0, 1)."""
    min_u, _, _, _, min_gap = scan
    return bool(min_u > 0.0 and min_gap > 0.0)


# -- entropy ledger --------------------------------------------------------------


@dataclass
class LedgerEntry:
    step: int
    time: float
    entropy: float
    penalty_term: float
    flux_term: float
    flux_bound_term: float
    jump_term: float
    source_term: float
    lhs: float
    rhs: float
    violated: bool


@dataclass
class EntropyLedger:
    """Accumulated terms of the discrete entropy inequality for backward Euler.

    At step n the inequality reads

        S(w^n) + sum_{m<=n} tau (eps |w^m|_A^2 + (N sigma^m, sigma^m) + |[[w^m]]|_J^2)
            <= S(c_0) + C_f |alpha|_inf |Omega| t_n + sum_{m<=n} tau (g^m, w^m)

    where S is the quadrature entropy. The flux term is recorded both as
    ``(N(w) sigma, sigma)`` and as the weaker ``4 D0 |sigma|^2``; the former
    enters ``lhs``.
    """

    initial_entropy: float
    reaction_budget_rate: float
    rel_slack: float = 1e-10
    entries: list[LedgerEntry] = field(default_factory=list)
    _acc: dict = field(default_factory=lambda: {"penalty": 0.0, "flux": 0.0, "flux_bound": 0.0, "jump": 0.0, "source": 0.0})

    @property
    def violated(self) -> bool:
        return any(e.violated for e in self.entries)

    @property
    def max_excess(self) -> float:
        """Largest relative amount by which lhs exceeded rhs (negative when it never did)."""
        if not self.entries:
            return float("-inf")
        return max((e.lhs - e.rhs) / max(1.0, abs(e.rhs)) for e in self.entries)

    def rows(self) -> list[dict]:
        return [asdict(e) for e in self.entries]


def start_ledger(space: DgSpace, c0, coeffs, rel_slack: float = 1e-10, C_f: float | None = None) -> EntropyLedger:
    x, y = space.qpts[..., 0], space.qpts[..., 1]
    S0 = space.integrate(s_entropy(np.clip(c0(x, y), 0.0, 1.0)))
    C_f = reaction_constant() if C_f is None else C_f
    return EntropyLedger(initial_entropy=S0, reaction_budget_rate=C_f * coeffs.alpha_max * space.mesh.area, rel_slack=rel_slack)


def entropy_ledger_step(
    ledger: EntropyLedger,
    step: int,
    time: float,
    W,
    Sigma,
    sys: LdgSystem,
    ops: NonlinearOps,
    tau: float,
    epsilon: float,
    source_load=None,
) -> LedgerEntry:
    acc = ledger._acc
    acc["penalty"] += tau * epsilon * float(W @ (sys.A_LDG @ W)) if epsilon else 0.0
    acc["flux"] += tau * float(Sigma @ (ops.assemble_N(W) @ Sigma))
    acc["flux_bound"] += tau * 4.0 * ops.coeffs.D0 * float(Sigma @ (sys.M_I @ Sigma))
    acc["jump"] += tau * float(W @ (sys.J @ W))
    if source_load is not None:
        acc["source"] += tau * float(W @ source_load)
    S = ops.entropy(W)
    lhs = S + acc["penalty"] + acc["flux"] + acc["jump"]
    rhs = ledger.initial_entropy + ledger.reaction_budget_rate * time + acc["source"]
    entry = LedgerEntry(
        step=step,
        time=time,
        entropy=S,
        penalty_term=acc["penalty"],
        flux_term=acc["flux"],
        flux_bound_term=acc["flux_bound"],
        jump_term=acc["jump"],
        source_term=acc["source"],
        lhs=lhs,
        rhs=rhs,
        violated=bool(lhs - rhs > ledger.rel_slack * max(1.0, abs(rhs))),
    )
    ledger.entries.append(entry)
    return entry


# -- activation time ---------------------------------------------------------------


def centroid_values(space: DgSpace, W) -> np.ndarray:
    """u(w_h) at the cell centroids."""
    cells = np.arange(space.n_cells)
    return u_eval(space.eval_cells(W, cells, space.centers))


def activation_time(space: DgSpace, snapshots, tau: float, c_crit: float) -> np.ndarray:
    """Per-cell time integral of the indicator u(w_h(x_K, t)) < c_crit.

    ``snapshots`` are the coefficient vectors at t_0, ..., t_N with uniform
    step ``tau``; the left-endpoint rule uses t_0 .. t_{N-1}, so a cell that
    never reaches ``c_crit`` reports T = N tau.
    """
    if not 0.0 < c_crit < 1.0:
        raise ValueError("c_crit must lie in (0, 1)")
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise ValueError("activation time needs at least two snapshots")
    below = np.array([centroid_values(space, W) < c_crit for W in snaps[:-1]])
    return tau * below.sum(axis=0)


def activation_from_centroid_series(series: np.ndarray, tau: float, c_crit: float) -> np.ndarray:
    """Same rule applied to precomputed centroid values of shape (N+1, n_cells)."""
    series = np.asarray(series)
    return tau * (series[:-1] < c_crit).sum(axis=0)
