"""Entropy variable kernel and the nonlinear volume operators.

With ``c = u(w) = e^w / (1 + e^w)`` every concentration represented by a
finite entropy variable lies strictly in (0, 1). All kernels clamp ``|w|``
at ``W_CLIP`` and use forms that never overflow.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar

from .dgspace import DgSpace
from .ldg import CoeffField, blockdiag, tensor_blocks

W_CLIP = 500.0
S2_LOWER = 4.0
C_F_BOUND = 0.25


def _clip(w):
    return np.clip(np.asarray(w, dtype=float), -W_CLIP, W_CLIP)


def u_eval(w):
    """Logistic map, evaluated as 1/(1+e^{-|w|}) mirrored for negative w."""
    w = _clip(w)
    e = np.exp(-np.abs(w))
    return np.where(w >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def u_complement(w):
    """1 - u(w) without cancellation."""
    return u_eval(-np.asarray(w, dtype=float))


def u_prime(w):
    w = _clip(w)
    e = np.exp(-np.abs(w))
    return e / (1.0 + e) ** 2


def s2_eval(w):
    """s''(u(w)) = e^{-w} + 2 + e^{w} = e^{|w|} (1 + e^{-|w|})^2."""
    a = np.abs(_clip(w))
    return np.exp(a) * (1.0 + np.exp(-a)) ** 2


def s2_prime(w):
    """d/dw s''(u(w)) = e^{w} - e^{-w}."""
    w = _clip(w)
    return np.exp(w) - np.exp(-w)


def s_of_w(w):
    """Entropy s(u(w)) = log 2 - log1p(e^{-|w|}) - |w| / (1 + e^{|w|})."""
    a = np.abs(_clip(w))
    e = np.exp(-a)
    # the exact value is nonnegative; cancellation near w = 0 can leave -1e-17 or so
    return np.maximum(np.log(2.0) - np.log1p(e) - a * e / (1.0 + e), 0.0)


def s_entropy(c):
    """s(c) = c log c + (1-c) log(1-c) + log 2 on [0, 1] (0 log 0 = 0)."""
    c = np.asarray(c, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(c > 0, c * np.log(np.where(c > 0, c, 1.0)), 0.0)
        t2 = np.where(c < 1, (1 - c) * np.log(np.where(c < 1, 1 - c, 1.0)), 0.0)
    return t1 + t2 + np.log(2.0)


def s_prime(c):
    c = np.asarray(c, dtype=float)
    return np.log(c) - np.log1p(-c)


def reaction_constant() -> float:
    """C_f = max over c in (0,1) of |c (1-c) s'(c)|."""
    g = lambda c: -abs(c * (1 - c) * s_prime(c))
    grid = np.linspace(1e-6, 1 - 1e-6, 20001)
    c0 = grid[np.argmin(g(grid))]
    res = minimize_scalar(g, bracket=(c0 - 1e-4, c0, c0 + 1e-4), tol=1e-12)
    return float(-res.fun)


class NonlinearOps:
    """Nonlinear volume functionals N(W), U(W), F(W) and their Jacobians.

    Everything is block-diagonal over cells; ``*_blocks`` methods return the
    per-cell dense blocks and the plain methods return sparse matrices.
    """

    def __init__(self, space: DgSpace, coeffs: CoeffField):
        self.space = space
        self.coeffs = coeffs
        self._phiT = np.ascontiguousarray(space.phi.transpose(0, 2, 1))

    def w_at_quad(self, W: np.ndarray) -> np.ndarray:
        w = self.space.values_at_quad(W)
        if not np.all(np.isfinite(w)):
            bad = int(np.flatnonzero(~np.isfinite(w).all(axis=1))[0])
            raise FloatingPointError(f"non-finite entropy variable in cell {bad}")
        return w

    def _weighted_mass(self, weight: np.ndarray) -> np.ndarray:
        return (self._phiT * (self.space.qw * weight)[:, None, :]) @ self.space.phi

    def s2_mass_blocks(self, W: np.ndarray) -> np.ndarray:
        """Scalar blocks S_K = int_K s''(u(w_h)) psi_i psi_j."""
        return self._weighted_mass(s2_eval(self.w_at_quad(W)))

    def N_blocks(self, W: np.ndarray) -> np.ndarray:
        return tensor_blocks(self.coeffs.diffusion, self.s2_mass_blocks(W))

    def assemble_N(self, W: np.ndarray):
        return blockdiag(self.N_blocks(W))

    def eval_U(self, W: np.ndarray) -> np.ndarray:
        return self.space.load(u_eval(self.w_at_quad(W)))

    def eval_F(self, W: np.ndarray) -> np.ndarray:
        w = self.w_at_quad(W)
        f = self.coeffs.alpha[:, None] * u_eval(w) * u_complement(w)
        return self.space.load(f)

    def dU_blocks(self, W: np.ndarray) -> np.ndarray:
        return self._weighted_mass(u_prime(self.w_at_quad(W)))

    def dF_blocks(self, W: np.ndarray) -> np.ndarray:
        w = self.w_at_quad(W)
        # 1 - 2u = (1-u) - u keeps precision near both ends
        weight = self.coeffs.alpha[:, None] * (u_complement(w) - u_eval(w)) * u_prime(w)
        return self._weighted_mass(weight)

    def P_blocks(self, W: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
        """Blocks of D_W(N(W)) Sigma: rows (d, i) vector, cols l scalar."""
        sp = self.space
        w = self.w_at_quad(W)
        sig = sp.vector_values_at_quad(Sigma)  # (K, q, 2)
        Dsig = np.einsum("kab,kqb->kqa", self.coeffs.diffusion, sig)
        wq = sp.qw * s2_prime(w)
        blk = np.stack([self._weighted_mass_raw(wq * Dsig[..., a]) for a in range(2)], axis=1)
        return blk.reshape(sp.n_cells, 2 * sp.n_loc, sp.n_loc)

    def _weighted_mass_raw(self, wq: np.ndarray) -> np.ndarray:
        return (self._phiT * wq[:, None, :]) @ self.space.phi

    def jacobians(self, W: np.ndarray, Sigma: np.ndarray):
        """(P, D_W U, D_W F) as sparse matrices."""
        return blockdiag(self.P_blocks(W, Sigma)), blockdiag(self.dU_blocks(W)), blockdiag(self.dF_blocks(W))

    def entropy(self, W: np.ndarray) -> float:
        return self.space.integrate(s_of_w(self.w_at_quad(W)))

    def mass(self, W: np.ndarray) -> float:
        return self.space.integrate(u_eval(self.w_at_quad(W)))
