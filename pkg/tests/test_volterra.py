import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from bhlab.model import BranchingModel, Exponential, derive_constants, reference_model
from bhlab.volterra import (GridFunction, GridTooCoarse, ScalingTooLarge, TimeGrid, extrapolate,
                            lifetime_masses, mean_matrix, renewal_matrix, richardson,
                            solve_generating_batch, solve_generating_system,
                            survival_probability, weighted_Q)

RATES = (1.0, 0.5)


@pytest.fixture(scope="module")
def markov():
    # both lifetimes exponential: the process is a continuous-time Markov chain
    m = reference_model()
    return BranchingModel(m.offspring, (Exponential(RATES[0]), Exponential(RATES[1])))


@pytest.fixture(scope="module")
def renewal_1e4(ref05):
    grid = TimeGrid.from_horizon(1e4, 0.5)
    return grid, renewal_matrix(ref05, grid)


# ---------------------------------------------------------------- grid plumbing

def test_grid_basics():
    g = TimeGrid.from_horizon(10.0, 0.5)
    assert g.n_points == 21 and g.horizon == 10.0 and g.index(3.5) == 7
    assert g.refined().h == 0.25 and g.refined().n_points == 41
    with pytest.raises(ValueError):
        TimeGrid.from_horizon(10.0, 0.3)
    with pytest.raises(ValueError):
        g.index(3.3)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 5)


def test_grid_function_interpolates():
    g = TimeGrid(1.0, 3)
    f = GridFunction(g, np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]))
    assert np.allclose(f(1.5), [3.0, 4.0])
    assert np.allclose(f.increments[1], [2.0, 2.0])
    with pytest.raises(ValueError):
        f(2.5)


def test_richardson_requires_refinement():
    g = TimeGrid(1.0, 3)
    f = GridFunction(g, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        richardson(f, f)


def test_grid_too_coarse(ref05):
    with pytest.raises(GridTooCoarse):
        lifetime_masses(ref05, TimeGrid(1.0, 10))  # Exp(1) puts 0.63 in the first step
    with pytest.raises(GridTooCoarse):
        lifetime_masses(ref05, TimeGrid(0.01, 50_000))


def test_csv_export(tmp_path, ref05):
    sol = solve_generating_system(ref05, (0.5, 0.5), TimeGrid.from_horizon(5.0, 0.5))
    p = tmp_path / "f.csv"
    sol.F.to_csv(p, every=2)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,F1,F2" and len(lines) == 1 + 6


# ---------------------------------------------------------------- exact oracles

def test_mean_matrix_matches_matrix_exponential(markov):
    A = np.diag(RATES) @ (markov.mean_matrix - np.eye(2))
    P = extrapolate(lambda g: mean_matrix(markov, g), TimeGrid.from_horizon(6.0, 0.02))
    for t in (0.5, 2.0, 6.0):
        assert np.allclose(P.at(t), expm(A * t), atol=2e-4)


def test_generating_function_matches_ode(markov):
    s = (0.3, 0.6)

    def rhs(_, F):
        f1, f2 = markov.f(F[0], F[1])
        return [RATES[0] * (f1 - F[0]), RATES[1] * (f2 - F[1])]

    ode = solve_ivp(rhs, (0, 6), s, rtol=1e-11, atol=1e-12, dense_output=True)
    F = extrapolate(lambda g: solve_generating_system(markov, s, g).F,
                    TimeGrid.from_horizon(6.0, 0.02))
    for t in (0.5, 2.0, 6.0):
        assert np.allclose(F.at(t), ode.sol(t), atol=2e-4)


def test_first_order_scheme(markov):
    # halving h roughly halves the error of the plain scheme
    A = np.diag(RATES) @ (markov.mean_matrix - np.eye(2))
    exact = expm(A * 4.0)
    err = [np.abs(mean_matrix(markov, TimeGrid.from_horizon(4.0, h)).at(4.0) - exact).max()
           for h in (0.04, 0.02)]
    assert 1.6 < err[0] / err[1] < 2.4


# ---------------------------------------------------------------- generating system

def test_pgf_at_one(ref05):
    sol = solve_generating_system(ref05, (1.0, 1.0), TimeGrid.from_horizon(50.0, 0.5))
    assert np.all(sol.F.values == 1.0) and sol.clamps == 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_pgf_bounds_and_monotone(a, b, c, d):
    m = reference_model(0.5)
    g = TimeGrid.from_horizon(20.0, 0.5)
    lo, hi = (min(a, c), min(b, d)), (max(a, c), max(b, d))
    Q, clamps = solve_generating_batch(m, [lo, hi], g)
    F = 1 - Q
    assert clamps == 0
    assert np.allclose(F[0, 0], lo) and np.allclose(F[1, 0], hi)
    assert np.all(F >= 0) and np.all(F <= 1)
    assert np.all(F[0] <= F[1] + 1e-14)


def test_bad_s(ref05):
    with pytest.raises(ValueError):
        solve_generating_system(ref05, (1.2, 0.5), TimeGrid(0.5, 3))


def test_survival_decreasing_and_type_ratio(ref05):
    Q = survival_probability(ref05, TimeGrid.from_horizon(1e4, 0.5))
    assert Q.clamps == 0
    assert np.all(np.diff(Q.values, axis=0) <= 1e-15)
    q = Q.at(1e4)
    assert q[0] / q[1] == pytest.approx(1.0, rel=0.1)  # u1 / u2 = 1


def test_weighted_Q(ref05, c05):
    g = TimeGrid.from_horizon(200.0, 0.5)
    psi = lambda t: 1.0 / (1.0 + t)
    t, vals = weighted_Q(ref05, g, 0.0, psi, c05.u, c05.v)
    assert np.all(vals == 0)
    t, vals = weighted_Q(ref05, g, 0.5, psi, c05.u, c05.v, times=[10.0, 100.0])
    for tk, val in zip(t, vals):
        s = 1 - 0.5 * c05.u * psi(tk)
        direct = solve_generating_system(ref05, s, TimeGrid.from_horizon(tk, 0.5)).Q.at(tk)
        assert val == pytest.approx(direct @ c05.v, rel=1e-12)
    with pytest.raises(ScalingTooLarge):
        weighted_Q(ref05, g, 3.0, psi, c05.u, c05.v, times=[0.5])


# ---------------------------------------------------------------- renewal asymptotics

def test_renewal_increments(ref05, renewal_1e4):
    c = derive_constants(ref05, "renewal")
    grid, (U, _) = renewal_1e4
    t, dt = 9990.0, 10.0
    ratio = (U.at(t + dt) - U.at(t)) * float(c.mu2(t)) / (dt * c.beta * c.gamma_beta)
    assert np.allclose(ratio / c.D, 1.0, atol=0.1)


def test_key_renewal_second_column(ref05, renewal_1e4):
    c = derive_constants(ref05, "renewal")
    grid, ren = renewal_1e4
    P = mean_matrix(ref05, grid, ren).at(1e4)
    assert np.allclose(P[:, 1] / c.D[:, 1], 1.0, atol=0.15)
    assert P[1, 0] < 0.05 and P[0, 0] < 0.05  # type-1 share vanishes like 1/mu2


def test_U_rank_one_shape(ref05, renewal_1e4):
    # both ancestors see the same long-run type-2 growth since type 1 always becomes type 2
    _, (U, _) = renewal_1e4
    u = U.at(1e4)
    assert u[0, 1] / u[1, 1] == pytest.approx(1.0, rel=0.01)
    assert (u[0, 0] - 1.0) / u[1, 0] == pytest.approx(1.0, rel=0.01)  # minus the identity
