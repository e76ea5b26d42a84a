"""Newton iteration for one BDF-LDG time step.

The flux unknown Sigma is eliminated cell by cell, so each iteration solves a
single sparse system in W:

    [eps A + DU/(tau beta) + J - DF + C^T N^{-1} (P + C)] W^{k+1} = rhs

with ``P = D_W(N(W^k)) Sigma^k`` and Sigma^k kept consistent with W^k through
``N(W^k) Sigma^k = -C W^k``; this is exact Newton for the reduced system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .entropy import NonlinearOps
from .ldg import LdgSystem, blockdiag

logger = logging.getLogger(__name__)

ROUNDOFF = 64 * np.finfo(float).eps


class NewtonError(RuntimeError):
    def __init__(self, msg: str, trace: "NewtonTrace | None" = None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class NewtonConfig:
    tol: float = 1e-10
    max_iters: int = 30
    epsilon: float = 0.0
    linear_solver: str = "direct"  # or "iterative"
    linear_tol: float = 1e-12
    linear_maxiter: int = 2000
    # increments below this (relative to ||w||) that stop shrinking are treated as roundoff
    stagnation_floor: float = 1e-9

    def __post_init__(self):
        if self.tol <= 0 or self.max_iters < 1 or self.epsilon < 0:
            raise ValueError("invalid Newton configuration")
        if self.linear_solver not in ("direct", "iterative"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class NewtonTrace:
    increments: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    linear_iters: list[int] = field(default_factory=list)
    stagnated: bool = False

    def __len__(self):
        return len(self.increments)


@dataclass
class StepProblem:
    """Data of one time step: 1/(tau beta), the weighted history sum and the source load."""

    inv_tb: float
    history: np.ndarray
    source: np.ndarray | None = None

    def rhs_const(self) -> np.ndarray:
        g = self.inv_tb * self.history
        return g if self.source is None else g + self.source


class _Linearization:
    """Nonlinear quantities at one iterate W, computed once and reused."""

    def __init__(self, ops: NonlinearOps, sys: LdgSystem, W: np.ndarray):
        self.W = W
        S = ops.s2_mass_blocks(W)
        D = ops.coeffs.diffusion
        # N^{-1} = kron(D^{-1}, S^{-1}) per cell
        Sinv = np.linalg.inv(S)
        Dinv = np.linalg.inv(D)
        nc, n = S.shape[0], S.shape[1]
        self.Ninv_blocks = np.einsum("kab,kij->kaibj", Dinv, Sinv).reshape(nc, 2 * n, 2 * n)
        self.CW = sys.C @ W
        self.Sigma = -self.apply_Ninv(self.CW)
        self.U = ops.eval_U(W)
        self.F = ops.eval_F(W)

    def apply_Ninv(self, v: np.ndarray) -> np.ndarray:
        nb, r, _ = self.Ninv_blocks.shape
        return np.einsum("kij,kj->ki", self.Ninv_blocks, v.reshape(nb, r)).ravel()


def residuals(W, Sigma, sys: LdgSystem, ops: NonlinearOps, prob: StepProblem, epsilon: float):
    """Two-field residuals (G1, G2)."""
    G1 = ops.assemble_N(W) @ Sigma + sys.C @ W
    G2 = (
        epsilon * (sys.A_LDG @ W)
        + prob.inv_tb * ops.eval_U(W)
        - sys.C.T @ Sigma
        + sys.J @ W
        - ops.eval_F(W)
        - prob.rhs_const()
    )
    return G1, G2


def reduced_residual(W, sys: LdgSystem, ops: NonlinearOps, prob: StepProblem, epsilon: float, lin: _Linearization | None = None):
    """Residual of the one-field system obtained by eliminating Sigma."""
    if lin is None:
        lin = _Linearization(ops, sys, W)
    return (
        epsilon * (sys.A_LDG @ W)
        + prob.inv_tb * lin.U
        - sys.C.T @ lin.Sigma
        + sys.J @ W
        - lin.F
        - prob.rhs_const()
    )


def nested_dissection(centers: np.ndarray, adjacency: sp.spmatrix, leaf_size: int = 16) -> np.ndarray:
    """Fill-reducing cell ordering by recursive coordinate bisection.

    Each split halves the cells at the median along the longer extent; the
    cells of the first half adjacent to the second form the separator and are
    numbered after both halves.
    """
    adjacency = sp.csr_matrix(adjacency)
    order: list[int] = []
    stack = [("split", np.arange(len(centers)))]
    while stack:
        kind, idx = stack.pop()
        if kind == "emit" or len(idx) <= leaf_size:
            order.extend(idx.tolist())
            continue
        pts = centers[idx]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        left = pts[:, axis] <= np.median(pts[:, axis])
        if left.all() or not left.any():
            order.extend(idx.tolist())
            continue
        crossing = adjacency[idx[left]][:, idx[~left]]
        on_sep = np.asarray(crossing.sum(axis=1)).ravel() > 0
        first = idx[left][~on_sep]
        # popped in reverse: first half, second half, separator
        stack.append(("emit", idx[left][on_sep]))
        stack.append(("split", idx[~left]))
        stack.append(("split", first))
    return np.array(order, dtype=np.int64)


class SchurAssembler:
    """Assembles C^T N^{-1} (P + C) plus block-diagonal and fixed sparse terms.

    Block row K of C couples cell K to itself and its facet neighbors, so the
    product is a sum over cells of small dense products
    ``C_K^T [N_K^{-1} (C_K + P_K E_K)]`` where ``C_K`` gathers the nonzero
    column blocks of row K (self first). These are formed with batched dense
    products and scattered into a fixed CSR pattern.
    """

    def __init__(self, sys: LdgSystem):
        space = sys.space
        n, nc = space.n_loc, space.n_cells
        mesh = space.mesh
        nbrs = [[k] for k in range(nc)]
        for f in mesh.interior_facets:
            a, b = mesh.facet_cells[f]
            nbrs[a].append(b)
            nbrs[b].append(a)
        nbrs = [[k] + sorted(set(v[1:]) - {k}) for k, v in enumerate(nbrs)]
        m = max(len(v) for v in nbrs)
        slots = np.array([v + [v[0]] * (m - len(v)) for v in nbrs])
        valid = np.array([[s < len(v) for s in range(m)] for v in nbrs])
        C = sys.C.tocsr()
        Cblk = np.zeros((nc, 2 * n, m * n))
        for k in range(nc):
            rows = C[2 * n * k : 2 * n * (k + 1)].toarray()
            for s_, j in enumerate(nbrs[k]):
                Cblk[k, :, s_ * n : (s_ + 1) * n] = rows[:, j * n : (j + 1) * n]
        if not np.isclose(np.abs(Cblk).sum(), np.abs(C.data).sum(), rtol=1e-12, atol=0.0):
            raise ValueError("C couples cells that are not facet neighbors")
        self.n, self.nc, self.m = n, nc, m
        self.Cblk = Cblk
        self.CblkT = np.ascontiguousarray(Cblk.transpose(0, 2, 1))
        # global dof index of every local column
        gidx = (slots[:, :, None] * n + np.arange(n)[None, None, :]).reshape(nc, m * n)
        lmask = np.repeat(valid, n, axis=1)
        R = np.broadcast_to(gidx[:, :, None], (nc, m * n, m * n))
        Cc = np.broadcast_to(gidx[:, None, :], (nc, m * n, m * n))
        keep = lmask[:, :, None] & lmask[:, None, :]
        self.keep = keep
        N = space.n_scalar
        keys = (R[keep].astype(np.int64) * N + Cc[keep])
        pattern_keys = np.unique(keys)
        self.rows = (pattern_keys // N).astype(np.int64)
        self.cols = (pattern_keys % N).astype(np.int64)
        indptr = np.zeros(N + 1, dtype=np.int64)
        np.add.at(indptr, self.rows + 1, 1)
        self.indptr = np.cumsum(indptr)
        self.pattern_keys = pattern_keys
        self.N = N
        self.pos_local = np.searchsorted(pattern_keys, keys)
        bd = np.arange(nc)[:, None, None] * n
        bi = np.broadcast_to(bd + np.arange(n)[None, :, None], (nc, n, n))
        bj = np.broadcast_to(bd + np.arange(n)[None, None, :], (nc, n, n))
        self.pos_diag = self.positions(bi.ravel(), bj.ravel())
        cell_graph = sp.csr_matrix((np.ones(len(self.rows)), (self.rows // n, self.cols // n)), shape=(nc, nc))
        cell_order = nested_dissection(space.centers, cell_graph)
        self.dof_order = (cell_order[:, None] * n + np.arange(n)[None, :]).ravel()

    def positions(self, r, c) -> np.ndarray:
        keys = np.asarray(r, dtype=np.int64) * self.N + np.asarray(c, dtype=np.int64)
        pos = np.searchsorted(self.pattern_keys, keys)
        ok = pos < len(self.pattern_keys)
        ok[ok] = self.pattern_keys[pos[ok]] == keys[ok]
        if not ok.all():
            raise ValueError("entries outside the Schur sparsity pattern")
        return pos

    def sparse_positions(self, A: sp.spmatrix) -> tuple[np.ndarray, np.ndarray]:
        A = A.tocoo()
        return self.positions(A.row, A.col), A.data

    def assemble(self, Ninv_blocks, P_blocks, diag_blocks, fixed=None) -> sp.csr_matrix:
        """Return C^T N^{-1} (P + C) + blockdiag(diag_blocks) + fixed."""
        n = self.n
        K = self.Cblk.copy()
        K[:, :, :n] += P_blocks
        K = Ninv_blocks @ K
        local = self.CblkT @ K
        data = np.bincount(self.pos_local, weights=local[self.keep], minlength=len(self.pattern_keys))
        data += np.bincount(self.pos_diag, weights=diag_blocks.ravel(), minlength=len(data))
        if fixed is not None:
            pos, vals = fixed
            data += np.bincount(pos, weights=vals, minlength=len(data))
        return sp.csr_matrix((data, self.cols, self.indptr), shape=(self.N, self.N))


class NewtonDriver:
    def __init__(self, sys: LdgSystem, ops: NonlinearOps, config: NewtonConfig):
        self.sys = sys
        self.ops = ops
        self.config = config
        self.Ct = sys.C.T.tocsr()
        base = (sys.J + config.epsilon * sys.A_LDG).tocsr() if config.epsilon else sys.J.tocsr()
        self.schur = SchurAssembler(sys)
        self._base = self.schur.sparse_positions(base)

    def _schur(self, lin: _Linearization, prob: StepProblem, Sigma: np.ndarray):
        ops = self.ops
        Pb = ops.P_blocks(lin.W, Sigma)
        DUb = ops.dU_blocks(lin.W)
        DFb = ops.dF_blocks(lin.W)
        S = self.schur.assemble(lin.Ninv_blocks, Pb, prob.inv_tb * DUb - DFb, self._base)
        P, DU, DF = blockdiag(Pb), blockdiag(DUb), blockdiag(DFb)
        W = lin.W
        PW = P @ W
        rhs = (
            prob.inv_tb * (DU @ W)
            - DF @ W
            - prob.inv_tb * lin.U
            + lin.F
            + self.Ct @ lin.apply_Ninv(PW)
            + prob.rhs_const()
        )
        return S, rhs, P, PW

    def _solve(self, S: sp.csr_matrix, rhs: np.ndarray) -> tuple[np.ndarray, int]:
        # row equilibration: rows of saturated cells can be scaled by e^{-|w|}
        scale = 1.0 / np.maximum(abs(S).max(axis=1).toarray().ravel(), np.finfo(float).tiny)
        Sr = sp.diags(scale) @ S
        br = scale * rhs
        if self.config.linear_solver == "direct":
            perm = self.schur.dof_order
            Sp = Sr.tocsr()[perm][:, perm].tocsc()
            bp = br[perm]
            # weak pivoting keeps the nested dissection fill; fall back if it hurts accuracy
            y = spla.splu(Sp, permc_spec="NATURAL", diag_pivot_thresh=0.01, options={"SymmetricMode": True}).solve(bp)
            if not np.linalg.norm(Sp @ y - bp) <= 1e-10 * max(np.linalg.norm(bp), 1e-300):
                logger.debug("weakly pivoted LU inaccurate, refactoring with partial pivoting")
                y = spla.splu(Sp, permc_spec="MMD_AT_PLUS_A").solve(bp)
            x = np.empty_like(br)
            x[perm] = y
            its = 1
        else:
            x, its = self._gmres(Sr.tocsr(), br)
        if not np.all(np.isfinite(x)):
            raise NewtonError("linear solve produced non-finite values")
        return x, its

    def _gmres(self, S: sp.csr_matrix, b: np.ndarray):
        n = self.ops.space.n_loc
        nc = self.ops.space.n_cells
        diag_blocks = np.empty((nc, n, n))
        Sc = S.tocsr()
        for k in range(nc):
            sl = slice(k * n, (k + 1) * n)
            diag_blocks[k] = Sc[sl, sl].toarray()
        inv = np.linalg.inv(diag_blocks)
        M = spla.LinearOperator(S.shape, matvec=lambda v: np.einsum("kij,kj->ki", inv, v.reshape(nc, n)).ravel())
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.gmres(S, b, M=M, rtol=self.config.linear_tol, atol=0.0, restart=200, maxiter=self.config.linear_maxiter, callback=cb, callback_type="pr_norm")
        if info != 0:
            raise NewtonError(f"GMRES did not converge (info={info})")
        return x, count[0]

    def newton_step(self, W: np.ndarray, Sigma: np.ndarray, prob: StepProblem, lin: _Linearization | None = None):
        """One Newton update (W^k, Sigma^k) -> (W^{k+1}, Sigma^{k+1})."""
        if lin is None:
            lin = _Linearization(self.ops, self.sys, W)
        S, rhs, P, PW = self._schur(lin, prob, Sigma)
        W_new, its = self._solve(S, rhs)
        Sigma_new = lin.apply_Ninv(-(P @ W_new) - self.sys.C @ W_new + PW)
        return W_new, Sigma_new, its

    def solve_step(self, W0: np.ndarray, prob: StepProblem):
        """Iterate until min(||w^{k+1} - w^k||_L2, |res_{k+1}|) <= tol."""
        cfg = self.config
        space = self.ops.space
        trace = NewtonTrace()
        W = np.array(W0, dtype=float)
        lin = _Linearization(self.ops, self.sys, W)
        for k in range(cfg.max_iters):
            W_new, _, its = self.newton_step(W, lin.Sigma, prob, lin)
            inc = space.l2_norm(W_new - W)
            lin = _Linearization(self.ops, self.sys, W_new)
            res = float(np.linalg.norm(reduced_residual(W_new, self.sys, self.ops, prob, cfg.epsilon, lin)))
            trace.increments.append(inc)
            trace.residuals.append(res)
            trace.linear_iters.append(its)
            W = W_new
            if not np.isfinite(inc) or not np.isfinite(res):
                raise NewtonError("Newton iteration diverged", trace)
            if min(inc, res) <= cfg.tol:
                return W, lin.Sigma, trace
            scale = max(1.0, space.l2_norm(W))
            floor = cfg.stagnation_floor * scale
            if k >= 1 and inc <= floor and inc * inc / trace.increments[-2] <= ROUNDOFF * scale:
                # quadratic contraction puts the next update below roundoff
                trace.stagnated = True
                return W, lin.Sigma, trace
            if k >= 1 and inc <= floor and inc >= 0.5 * trace.increments[-2]:
                trace.stagnated = True
                logger.debug("Newton stagnated at roundoff: inc=%.3e res=%.3e", inc, res)
                return W, lin.Sigma, trace
        raise NewtonError(
            f"Newton did not converge in {cfg.max_iters} iterations "
            f"(last increment {trace.increments[-1]:.3e}, residual {trace.residuals[-1]:.3e})",
            trace,
        )
