from collections import deque
from fractions import Fraction

import numpy as np
import pytest

from fkldg.bdf import MAX_STEPS, TimeState, bdf_coefficients, integrate_ode


def vandermonde_bdf(nu):
    """Coefficients from the moment conditions sum_j c_j (-j)^m = m * delta_{m,1}, j = 0..nu."""
    nodes = -np.arange(nu + 1, dtype=float)
    V = np.vander(nodes, nu + 1, increasing=True).T  # rows m = 0..nu
    rhs = np.zeros(nu + 1)
    rhs[1] = 1.0
    c = np.linalg.solve(V, rhs)  # derivative weights: y'(t_{n+1}) ~ sum c_j y^{n+1-j} / tau
    beta = 1.0 / c[0]
    return beta, -c[1:] / c[0]


def test_backward_euler():
    s = bdf_coefficients(1)
    assert s.beta == 1.0 and s.a == (1.0,)


def test_bdf2_exact_fractions():
    s = bdf_coefficients(2)
    assert s.beta_exact == Fraction(2, 3)
    assert s.a_exact == (Fraction(4, 3), Fraction(-1, 3))


@pytest.mark.parametrize("nu", range(1, MAX_STEPS + 1))
def test_against_vandermonde_oracle(nu):
    s = bdf_coefficients(nu)
    beta, a = vandermonde_bdf(nu)
    assert s.beta == pytest.approx(beta, rel=1e-12)
    np.testing.assert_allclose(s.a, a, rtol=1e-11)
    assert sum(s.a_exact) == 1


@pytest.mark.parametrize("nu", range(1, MAX_STEPS + 1))
def test_polynomial_exactness(nu):
    """y = t^m, m <= nu, satisfies the scheme exactly: y' = m t^{m-1}."""
    s = bdf_coefficients(nu)
    tau = Fraction(1, 7)
    t1 = Fraction(3)
    for m in range(1, nu + 1):
        lhs = t1**m - sum(a * (t1 - j * tau) ** m for j, a in enumerate(s.a_exact, start=1))
        assert lhs == tau * s.beta_exact * m * t1 ** (m - 1)


@pytest.mark.parametrize("nu", [0, 7, -1])
def test_out_of_range_rejected(nu):
    with pytest.raises(ValueError, match="unstable"):
        bdf_coefficients(nu)


@pytest.mark.parametrize("nu, tol", [(1, 0.15), (2, 0.15), (3, 0.15), (4, 0.15), (5, 0.3), (6, 0.3)])
def test_order_on_linear_decay(nu, tol):
    T = 1.0
    taus = [0.05, 0.025, 0.0125]
    errs = []
    for tau in taus:
        hist = [np.exp(-j * tau) for j in range(nu - 1, -1, -1)]  # exact start, most recent first
        N = int(round(T / tau))
        y = integrate_ode(lambda k: bdf_coefficients(nu), lambda y, t: -y, lambda y, t: -1.0, hist, tau, N - (nu - 1), (nu - 1) * tau)
        errs.append(abs(y - np.exp(-T)))
    slope = np.polyfit(np.log(taus), np.log(errs), 1)[0]
    assert abs(slope - nu) <= tol


def test_history_ring_buffer():
    s = bdf_coefficients(3)
    st = TimeState(step=0, time=0.0, tau=0.1, W=np.zeros(2), Sigma=np.zeros(4), max_history=3)
    vecs = [np.full(2, float(i)) for i in range(5)]
    for i, v in enumerate(vecs):
        before = list(st.history)
        st.push(v)
        assert len(st.history) == min(i + 1, 3)
        # shift: new history[j] equals previous history[j-1]
        for j in range(1, len(st.history)):
            np.testing.assert_array_equal(st.history[j], before[j - 1])
    np.testing.assert_allclose(st.history_sum(s), sum(a * vecs[4 - j] for j, a in enumerate(s.a)))


def test_history_sum_needs_enough_entries():
    st = TimeState(step=0, time=0.0, tau=0.1, W=np.zeros(1), Sigma=np.zeros(2), history=deque([np.zeros(1)]))
    with pytest.raises(ValueError):
        st.history_sum(bdf_coefficients(2))


@pytest.mark.parametrize("nu", [1, 2, 3, 4, 5])
def test_design_order_on_pointwise_logistic_problem(nu):
    from oracles import pointwise_bdf_errors
    from fkldg.runner import loglog_slope

    taus = [0.04, 0.02, 0.01]
    errs = pointwise_bdf_errors(nu, taus, n=20)
    assert abs(loglog_slope(taus, errs) - nu) < 0.15
