"""Run configuration, initialization and the BDF time loop."""

from __future__ import annotations

import logging
import time as _time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bdf import BdfScheme, TimeState, bdf_coefficients
from .dgspace import DgSpace
from .diagnostics import (
    EntropyLedger,
    ErrorReport,
    entropy_ledger_step,
    error_norms,
    sample_points,
    start_ledger,
)
from .entropy import NonlinearOps, s_prime, u_complement, u_eval
from .ldg import LdgSystem, assemble
from .newton import NewtonConfig, NewtonDriver, NewtonError, NewtonTrace, StepProblem, _Linearization
from .polymesh import PolyMesh, generate_voronoi
from .scenarios import Scenario, get_scenario

logger = logging.getLogger(__name__)

CLAMP = 1e-8


@dataclass
class RunConfig:
    scenario: str = "mms-linear-time"
    scenario_params: dict = field(default_factory=dict)
    mesh_file: str | None = None
    n_cells: int = 100
    lloyd_iters: int = 50
    seed: int = 0
    degree: int = 1
    theta: float | None = None
    eta0: float | None = None
    use_facet_count: bool | None = None
    epsilon: float | None = None
    nu: int = 1
    tau: float = 1e-3
    T: float | None = None
    tol: float | None = None
    max_iters: int = 30
    linear_solver: str = "direct"
    init: str = "rampup"
    output_dir: str | None = None
    snapshot_every: int = 0
    sample_level: int | None = None
    c_crit: float = 0.95
    vtk: bool = True
    dump_matrices: str | None = None

    def __post_init__(self):
        if self.init not in ("exact", "rampup"):
            raise ValueError(f"init must be 'exact' or 'rampup', got {self.init!r}")
        if not 1 <= self.nu <= 6:
            raise ValueError("nu must be in 1..6")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.n_cells < 1 and self.mesh_file is None:
            raise ValueError("n_cells must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved(self, scenario: Scenario) -> "RunConfig":
        """Copy with scenario defaults filled in for every unset numerical parameter."""
        d = self.to_dict()
        for key in ("theta", "eta0", "use_facet_count", "epsilon", "tol"):
            if d[key] is None:
                d[key] = scenario.defaults[key]
        if d["T"] is None:
            d["T"] = scenario.T
        return RunConfig.from_dict(d)


def n_steps(T: float, tau: float) -> int:
    N = int(round(T / tau))
    if N < 1 or abs(N * tau - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T = {T} is not a whole number of steps of size {tau}")
    return N


def entropy_guess(space: DgSpace, c_values: np.ndarray) -> np.ndarray:
    """Cellwise-constant s'(mean c) with the mean clamped into [delta, 1 - delta]."""
    areas = space.qw.sum(axis=1)
    mean = (space.qw * c_values).sum(axis=1) / areas
    w = s_prime(np.clip(mean, CLAMP, 1.0 - CLAMP))
    return space.project_values(np.broadcast_to(w[:, None], space.qw.shape).copy())


def entropy_projection(space: DgSpace, c_values: np.ndarray) -> np.ndarray:
    """Projection of s'(c) with c clamped into [delta, 1 - delta] pointwise."""
    return space.project_values(s_prime(np.clip(c_values, CLAMP, 1.0 - CLAMP)))


@dataclass
class Discretization:
    mesh: PolyMesh
    space: DgSpace
    sys: LdgSystem
    ops: NonlinearOps


def build_discretization(cfg: RunConfig, scenario: Scenario, mesh: PolyMesh | None = None) -> Discretization:
    if mesh is None:
        if cfg.mesh_file:
            from .io import load_mesh

            mesh = load_mesh(cfg.mesh_file)
        else:
            mesh = generate_voronoi(scenario.domain, cfg.n_cells, cfg.lloyd_iters, cfg.seed)
    if scenario.label_mesh is not None and mesh.cell_labels is None:
        mesh = scenario.label_mesh(mesh)
    space = DgSpace(mesh, cfg.degree)
    coeffs = scenario.coeffs(mesh)
    sys = assemble(space, coeffs, cfg.theta, cfg.eta0, cfg.use_facet_count)
    return Discretization(mesh, space, sys, NonlinearOps(space, coeffs))


class Stepper:
    """Owns the per-run solver objects and advances a TimeState."""

    def __init__(self, disc: Discretization, scenario: Scenario, cfg: RunConfig):
        self.disc = disc
        self.scenario = scenario
        self.cfg = cfg
        self.driver = NewtonDriver(
            disc.sys,
            disc.ops,
            NewtonConfig(tol=cfg.tol, max_iters=cfg.max_iters, epsilon=cfg.epsilon, linear_solver=cfg.linear_solver),
        )
        self.traces: list[tuple[int, NewtonTrace]] = []

    def source_load(self, t: float):
        if self.scenario.source is None:
            return None
        sp = self.disc.space
        return sp.load(self.scenario.source(sp.qpts[..., 0], sp.qpts[..., 1], t))

    def advance(self, state: TimeState, scheme: BdfScheme) -> TimeState:
        """Solve for step n+1 and push U(W^{n+1}) into the history."""
        t_new = (state.step + 1) * state.tau
        src = self.source_load(t_new)
        prob = StepProblem(1.0 / (state.tau * scheme.beta), state.history_sum(scheme), src)
        try:
            W, Sigma, trace = self.driver.solve_step(state.W, prob)
        except NewtonError as exc:
            raise NewtonError(f"step {state.step + 1} (t = {t_new:.6g}): {exc}", exc.trace) from exc
        self.traces.append((state.step + 1, trace))
        state.step += 1
        state.time = t_new
        state.W, state.Sigma = W, Sigma
        state.push(self.disc.ops.eval_U(W))
        state.last_source = src
        return state

    def sync_sigma(self, W: np.ndarray) -> np.ndarray:
        return _Linearization(self.disc.ops, self.disc.sys, W).Sigma

    def initialize(self, scheme: BdfScheme, mode: str = "rampup", on_step=None) -> TimeState:
        """History U^(0) = (c0, psi_i); then seed steps 1..nu-1 (exact or by ramp-up)."""
        sp = self.disc.space
        sc = self.scenario
        x, y = sp.qpts[..., 0], sp.qpts[..., 1]
        sc.check_initial()
        c0 = sc.c0(x, y)
        W0 = entropy_guess(sp, c0)
        state = TimeState(step=0, time=0.0, tau=self.cfg.tau, W=W0, Sigma=self.sync_sigma(W0), max_history=scheme.nu)
        state.push(sp.load(c0))
        state.last_source = None
        if scheme.nu == 1:
            return state
        N = n_steps(self.cfg.T, self.cfg.tau)
        if scheme.nu - 1 > N:
            raise ValueError(
                f"BDF{scheme.nu} needs {scheme.nu - 1} starting steps but the run has only {N} steps"
            )
        if mode == "exact":
            if not sc.has_exact:
                raise ValueError(f"scenario {sc.name!r} has no exact solution; use init mode 'rampup'")
            for k in range(1, scheme.nu):
                ck = sc.exact(x, y, k * state.tau)
                state.push(sp.load(ck))
                state.step, state.time = k, k * state.tau
                state.W = entropy_projection(sp, ck)
            state.Sigma = self.sync_sigma(state.W)
        elif mode == "rampup":
            for k in range(1, scheme.nu):
                self.advance(state, bdf_coefficients(k))
                if on_step is not None:
                    on_step(state)
        else:
            raise ValueError(f"unknown init mode {mode!r}")
        return state


class _Sampler:
    """Cached basis values at the positivity sample points."""

    def __init__(self, space: DgSpace, level: int | None):
        self.cells, self.pts = sample_points(space, level)
        self.space = space
        self.phi = space.basis(self.cells, self.pts[:, None, :])[:, 0, :]
        self.cphi = space.basis(np.arange(space.n_cells), space.centers[:, None, :])[:, 0, :]

    def extremes(self, W):
        w = np.einsum("ni,ni->n", self.phi, self.space.cell_coeffs(W)[self.cells])
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("non-finite entropy variable at a sample point")
        return float(u_eval(w).min()), float(u_eval(w).max()), float(u_complement(w).min())

    def centroids(self, W):
        return u_eval(np.einsum("ki,ki->k", self.cphi, self.space.cell_coeffs(W)))


@dataclass
class RunResult:
    config: RunConfig
    scenario: Scenario
    disc: Discretization
    W: np.ndarray
    Sigma: np.ndarray
    time: float
    steps: int
    errors: ErrorReport | None
    ledger: EntropyLedger
    traces: list
    min_u: float
    max_u: float
    min_gap: float
    centroid_series: np.ndarray
    activation: np.ndarray
    snapshots: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def positive(self) -> bool:
        """Every sampled value of u(w_h) stayed strictly inside (0, 1)."""
        return self.min_u > 0.0 and self.min_gap > 0.0

    @property
    def entropy_ok(self) -> bool:
        return not self.ledger.violated

    @property
    def newton_iterations(self) -> int:
        return sum(len(t) for _, t in self.traces)


def simulate(cfg: RunConfig, scenario: Scenario | None = None, mesh: PolyMesh | None = None) -> RunResult:
    """Initialize, run the time loop to T and collect diagnostics (no file output)."""
    t_start = _time.perf_counter()
    if scenario is None:
        scenario = get_scenario(cfg.scenario, **cfg.scenario_params)
    cfg = cfg.resolved(scenario)
    N = n_steps(cfg.T, cfg.tau)
    disc = build_discretization(cfg, scenario, mesh)
    space = disc.space
    stepper = Stepper(disc, scenario, cfg)
    sampler = _Sampler(space, cfg.sample_level)
    ledger = start_ledger(space, scenario.c0, disc.ops.coeffs)
    scheme = bdf_coefficients(cfg.nu)

    lo, hi, gap = 1.0, 0.0, 1.0
    series = []
    snapshots = []

    def record(state: TimeState, snapshot: bool):
        nonlocal lo, hi, gap
        if state.step > 0:
            entropy_ledger_step(ledger, state.step, state.time, state.W, state.Sigma, disc.sys, disc.ops, cfg.tau, cfg.epsilon, state.last_source)
        a, b, g = sampler.extremes(state.W)
        lo, hi, gap = min(lo, a), max(hi, b), min(gap, g)
        series.append(sampler.centroids(state.W))
        if snapshot:
            snapshots.append((state.step, state.time, state.W.copy()))

    def is_snapshot(step):
        return cfg.snapshot_every > 0 and (step % cfg.snapshot_every == 0 or step == N)

    # centroid series at t_0 uses c0 itself, not the entropy guess
    c0_cent = scenario.c0(space.centers[:, 0], space.centers[:, 1])
    series.append(np.asarray(c0_cent, dtype=float) + 0.0 * space.centers[:, 0])
    if cfg.snapshot_every > 0:
        c0_q = scenario.c0(space.qpts[..., 0], space.qpts[..., 1])
        snapshots.append((0, 0.0, entropy_projection(space, c0_q)))

    def on_ramp(state):
        record(state, is_snapshot(state.step))

    state = stepper.initialize(scheme, cfg.init, on_step=on_ramp)
    if cfg.init == "exact" and cfg.nu > 1:
        for k in range(1, state.step + 1):
            series.append(scenario.exact(space.centers[:, 0], space.centers[:, 1], k * cfg.tau) + 0.0 * space.centers[:, 0])
    while state.step < N:
        stepper.advance(state, scheme)
        record(state, is_snapshot(state.step))
        logger.debug("step %d t=%.4g newton=%d", state.step, state.time, len(stepper.traces[-1][1]))

    errors = None
    if scenario.has_exact:
        errors = error_norms(space, state.W, state.Sigma, scenario.exact, scenario.exact_grad, state.time, disc.sys)
    series = np.array(series)
    activation = cfg.tau * (series[:-1] < cfg.c_crit).sum(axis=0)
    return RunResult(
        config=cfg,
        scenario=scenario,
        disc=disc,
        W=state.W,
        Sigma=state.Sigma,
        time=state.time,
        steps=state.step,
        errors=errors,
        ledger=ledger,
        traces=stepper.traces,
        min_u=lo,
        max_u=hi,
        min_gap=gap,
        centroid_series=series,
        activation=activation,
        snapshots=snapshots,
        wall_time=_time.perf_counter() - t_start,
    )
