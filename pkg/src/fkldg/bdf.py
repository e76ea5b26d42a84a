"""Backward differentiation formulas on uniform time meshes.

The scheme is written as ``y^{n+1} - sum_j a_j y^{n+1-j} = tau * beta * g(y^{n+1}, t_{n+1})``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

MAX_STEPS = 6


@dataclass(frozen=True)
class BdfScheme:
    nu: int
    beta: float
    a: tuple[float, ...]
    beta_exact: Fraction
    a_exact: tuple[Fraction, ...]


def bdf_coefficients(nu: int) -> BdfScheme:
    """Differentiate the interpolant through t_{n+1}, ..., t_{n+1-nu} at t_{n+1}."""
    if not 1 <= nu <= MAX_STEPS:
        raise ValueError(f"BDF{nu} is not available: BDF schemes with more than {MAX_STEPS} steps are unstable")
    nodes = [Fraction(-j) for j in range(nu + 1)]  # in units of tau, node 0 is t_{n+1}
    # derivative at node 0 of the Lagrange basis polynomial of node j
    delta = []
    for j, xj in enumerate(nodes):
        if j == 0:
            d = sum(Fraction(1) / (nodes[0] - xm) for xm in nodes[1:])
        else:
            num = Fraction(1)
            for m, xm in enumerate(nodes):
                if m not in (0, j):
                    num *= nodes[0] - xm
            den = Fraction(1)
            for m, xm in enumerate(nodes):
                if m != j:
                    den *= xj - xm
            d = num / den
        delta.append(d)
    beta = 1 / delta[0]
    a = tuple(-d / delta[0] for d in delta[1:])
    return BdfScheme(nu, float(beta), tuple(float(x) for x in a), beta, a)


@dataclass
class TimeState:
    """Solution at step ``n`` plus the load-vector history, most recent first."""

    step: int
    time: float
    tau: float
    W: np.ndarray
    Sigma: np.ndarray
    history: deque = field(default_factory=deque)
    max_history: int = MAX_STEPS

    def push(self, U: np.ndarray):
        self.history.appendleft(U)
        while len(self.history) > self.max_history:
            self.history.pop()

    def history_sum(self, scheme: BdfScheme) -> np.ndarray:
        if len(self.history) < scheme.nu:
            raise ValueError(f"BDF{scheme.nu} needs {scheme.nu} history entries, have {len(self.history)}")
        return sum(a * U for a, U in zip(scheme.a, self.history))


def integrate_ode(scheme_for_step, f, dfdy, y_hist: list[float], tau: float, n_steps: int, t0: float = 0.0) -> float:
    """Scalar BDF integration used for order checks; ``y_hist`` most recent first."""
    hist = list(y_hist)
    t = t0
    y = hist[0]
    for _ in range(n_steps):
        sch = scheme_for_step(len(hist))
        t += tau
        rhs = sum(a * yy for a, yy in zip(sch.a, hist))
        for _ in range(50):
            r = y - rhs - tau * sch.beta * f(y, t)
            dy = -r / (1.0 - tau * sch.beta * dfdy(y, t))
            y += dy
            if abs(dy) < 1e-15 * max(1.0, abs(y)):
                break
        hist.insert(0, y)
    return y
