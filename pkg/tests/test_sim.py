import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bhlab.model import Constant, Exponential, LogPower, ParetoTail, UniformLife, reference_model
from bhlab.sim import (SampleBatch, SimConfig, Stream, sample_lifetime, sample_offspring,
                       simulate_batch, simulate_population)
from bhlab.volterra import TimeGrid, extrapolate, mean_matrix


# ---------------------------------------------------------------- samplers

def test_lifetime_examples():
    par = ParetoTail(0.5, 1.0, Constant(1.0))
    assert sample_lifetime(par, 0.0) == pytest.approx(1.0)
    assert sample_lifetime(par, 0.75) == pytest.approx(16.0)
    assert sample_lifetime(Exponential(1.0), 1 - math.exp(-1)) == pytest.approx(1.0)
    assert sample_lifetime(UniformLife(1.0, 3.0), 0.25) == pytest.approx(1.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.5, 5.0), st.floats(0.0, 0.999999))
def test_pareto_inverse_cdf(beta, t0, u):
    law = ParetoTail(beta, t0, Constant(1.0))
    x = sample_lifetime(law, u)
    assert x >= t0
    atom = 1 - t0 ** -beta  # mass sitting at t0 when t0 > 1
    if u <= atom:
        assert x == t0
    else:
        assert float(law.tail(x)) == pytest.approx(1 - u, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(-1.5, 1.5), st.floats(0.01, 0.999))
def test_logpower_inverse_cdf(beta, p, u):
    law = ParetoTail(beta, 1.0, LogPower(0.3, p))
    x = sample_lifetime(law, u)
    atom = 1 - float(law.tail(1.0))
    if u <= atom:
        assert x == pytest.approx(1.0)
    else:
        assert float(law.tail(x)) == pytest.approx(1 - u, rel=1e-7)


@settings(max_examples=100)
@given(st.floats(0.0, 0.999999), st.floats(0.0, 0.999999))
def test_lifetime_monotone_in_u(a, b):
    law = ParetoTail(0.3, 1.0, LogPower(1.0, 0.5))
    lo, hi = min(a, b), max(a, b)
    assert sample_lifetime(law, lo) <= sample_lifetime(law, hi)


def test_offspring_examples():
    m = reference_model()
    assert sample_offspring(m.offspring[1], 0.1) == (0, 0)
    assert sample_offspring(m.offspring[1], 0.6) == (1, 1)
    for u in (0.0, 0.3, 0.99):
        assert sample_offspring(m.offspring[0], u) == (0, 1)


def test_offspring_frequencies():
    law = reference_model().offspring[1]
    u = np.random.default_rng(0).random(40_000)
    got = [sample_offspring(law, x) for x in u]
    for k, p in law.outcomes:
        freq = sum(g == k for g in got) / len(got)
        assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / len(got))


# ---------------------------------------------------------------- populations

def test_time_zero():
    s = simulate_population(reference_model(), 9, 0.0, Stream(1, 0))
    assert (s.z1, s.z2, s.events) == (0, 9, 0)


def test_before_t0_nothing_dies():
    b = simulate_batch(reference_model(), SimConfig(N=7, t=0.5, replicates=200, seed=3))
    assert np.all(b.z2 == 7) and np.all(b.z1 == 0)


def test_type1_ancestor():
    b = simulate_batch(reference_model(), SimConfig(N=1, t=1e-9, replicates=50,
                                                    ancestor_type=1))
    assert np.all(b.z1 == 1) and np.all(b.z2 == 0)


def test_determinism_and_chunking():
    m = reference_model(0.25)
    cfg = SimConfig(N=20, t=300.0, replicates=400, seed=11)
    a = simulate_batch(m, cfg)
    b = simulate_batch(m, cfg)
    parts = SampleBatch.concat([simulate_batch(m, cfg, 0, 150), simulate_batch(m, cfg, 150, 250)])
    for f in ("z1", "z2", "events", "truncated"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
        assert np.array_equal(getattr(a, f), getattr(parts, f))
    single = simulate_population(m, 20, 300.0, Stream(11, 37))
    assert (single.z1, single.z2) == (a.z1[37], a.z2[37])


def test_seed_changes_result():
    m = reference_model()
    a = simulate_batch(m, SimConfig(N=5, t=50.0, replicates=100, seed=1))
    b = simulate_batch(m, SimConfig(N=5, t=50.0, replicates=100, seed=2))
    assert not np.array_equal(a.z2, b.z2)


def test_budget_truncation_flagged():
    b = simulate_batch(reference_model(), SimConfig(N=50, t=1e3, replicates=20,
                                                    event_budget=10))
    assert b.truncation_count == 20 and not b.valid
    assert len(b.usable()) == 0


def test_truncation_regression():
    cfg = SimConfig(N=100, t=1e4, replicates=10_000, seed=5, event_budget=10**7)
    b = simulate_batch(reference_model(0.5), cfg)
    assert b.truncation_fraction < 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(N=1, t=1.0, replicates=0)
    with pytest.raises(ValueError):
        SimConfig(N=1, t=1.0, replicates=1, ancestor_type=3)


def test_to_samples_roundtrip():
    b = simulate_batch(reference_model(), SimConfig(N=3, t=10.0, replicates=5))
    s = b.to_samples()
    assert [x.z2 for x in s] == list(b.z2)


def test_additivity_over_ancestors():
    # N ancestors are independent: the mean of Z2 scales with N
    m = reference_model(0.5)
    one = simulate_batch(m, SimConfig(N=1, t=30.0, replicates=40_000, seed=21)).z2
    ten = simulate_batch(m, SimConfig(N=10, t=30.0, replicates=4_000, seed=22)).z2
    se = math.sqrt(10 * one.var() / 4_000 + 100 * one.var() / 40_000)
    assert abs(ten.mean() - 10 * one.mean()) < 4 * se


def test_mean_matches_volterra():
    m = reference_model(0.5)
    P = extrapolate(lambda g: mean_matrix(m, g), TimeGrid.from_horizon(100.0, 0.25)).at(100.0)
    for anc, i in ((1, 0), (2, 1)):
        b = simulate_batch(m, SimConfig(N=1, t=100.0, replicates=100_000, seed=30 + anc,
                                        ancestor_type=anc))
        for j, z in enumerate((b.z1, b.z2)):
            se = z.std(ddof=1) / math.sqrt(len(z))
            assert abs(z.mean() - P[i, j]) < 3 * se + 1e-3, (i, j)
