"""Exact Monte Carlo for the two-type Bellman-Harris process observed at one horizon."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .model import (LIFE_EXPONENTIAL, LIFE_PARETO_CONST, LIFE_PARETO_LOG, LIFE_UNIFORM,
                    BranchingModel, OffspringLaw)
from .rng import next_pair, stream_init

DEFAULT_EVENT_BUDGET = 10_000_000
MAX_TRUNCATION = 0.01


# ---------------------------------------------------------------- samplers

@nb.njit(cache=True)
def _log_pareto_root(beta, c, p, target):
    """Solve ln c + p ln ln(e + e^x) - beta x = target for x = ln t (Newton with a bracket)."""
    x = (math.log(c) - target) / beta
    lo, hi = -50.0, 800.0
    for _ in range(200):
        ee = math.exp(x)
        L = math.log(math.e + ee)
        g = math.log(c) + p * math.log(L) - beta * x - target
        if g > 0:
            lo = x
        else:
            hi = x
        dg = p * ee / ((math.e + ee) * L) - beta
        step = g / dg if dg != 0 else 0.0
        xn = x - step
        if not (lo < xn < hi) or dg >= 0:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) < 1e-14 * max(1.0, abs(x)):
            return xn
        x = xn
    return x


@nb.njit(cache=True)
def _atom_top(kind, beta, t0, c, p):
    # G2 jumps to this level at t0 (zero when ell(t0) t0^-beta = 1)
    ell0 = c if kind == LIFE_PARETO_CONST else c * math.log(math.e + t0) ** p
    return 1.0 - ell0 * t0 ** (-beta)


@nb.njit(cache=True)
def _pareto_fast(kind, beta, t0, c, p, atom_top, u):
    if u <= atom_top:
        return t0
    if kind == LIFE_PARETO_CONST:
        return (c / (1.0 - u)) ** (1.0 / beta)
    x = _log_pareto_root(beta, c, p, math.log1p(-u))
    return max(math.exp(x), t0)


@nb.njit(cache=True)
def pareto_quantile(kind, beta, t0, c, p, u):
    return _pareto_fast(kind, beta, t0, c, p, _atom_top(kind, beta, t0, c, p), u)


@nb.njit(cache=True)
def _sample_life(kind, p0, p1, p2, p3, p4, u):
    # p4 caches the Pareto atom level
    if kind == LIFE_EXPONENTIAL:
        return -math.log1p(-u) / p0
    if kind == LIFE_UNIFORM:
        return p0 + (p1 - p0) * u
    return _pareto_fast(kind, p0, p1, p2, p3, p4, u)


@nb.njit(cache=True)
def _pick(cum, n, u):
    for j in range(n - 1):
        if u < cum[j]:
            return j
    return n - 1


def sample_lifetime(law, u: float) -> float:
    """Inverse-CDF draw from a lifetime law given u in [0, 1)."""
    kind, par = law.numba_params()
    top = _atom_top(kind, *par) if kind in (LIFE_PARETO_CONST, LIFE_PARETO_LOG) else 0.0
    return float(_sample_life(kind, par[0], par[1], par[2], par[3], top, float(u)))


def sample_offspring(law: OffspringLaw, u: float) -> tuple:
    """Outcome whose cumulative-probability bucket contains u."""
    cum = np.cumsum(law.probs)
    j = _pick(cum, len(cum), float(u))
    return law.outcomes[j][0]


# ---------------------------------------------------------------- kernel

def _model_arrays(model: BranchingModel):
    kinds = np.zeros(2, dtype=np.int64)
    pars = np.zeros((2, 5))
    for i, law in enumerate(model.lifetimes):
        k, p = law.numba_params()
        kinds[i] = k
        pars[i, :4] = p
        if k in (LIFE_PARETO_CONST, LIFE_PARETO_LOG):
            pars[i, 4] = _atom_top(k, *p)
    width = max(len(law.outcomes) for law in model.offspring)
    cum = np.ones((2, width))
    kids = np.zeros((2, width, 2), dtype=np.int64)
    nout = np.zeros(2, dtype=np.int64)
    for i, law in enumerate(model.offspring):
        n = len(law.outcomes)
        cum[i, :n] = np.cumsum(law.probs)
        kids[i, :n] = law.counts
        nout[i] = n
    return kinds, pars, cum, kids, nout


@nb.njit(cache=True)
def _one_replicate(n_anc, anc_type, horizon, seed, rep, kinds, pars, cum, kids, nout, budget):
    st = stream_init(seed, rep)
    cap = 256
    s_time = np.empty(cap)
    s_type = np.empty(cap, dtype=np.int64)
    z = np.zeros(2, dtype=np.int64)
    events = 0
    for _ in range(n_anc):
        sp = 0
        s_time[0] = 0.0
        s_type[0] = anc_type
        sp = 1
        while sp > 0:
            sp -= 1
            b = s_time[sp]
            i = s_type[sp]
            u_life, u_off = next_pair(st)  # one counter block per particle
            life = _sample_life(kinds[i], pars[i, 0], pars[i, 1], pars[i, 2], pars[i, 3],
                                pars[i, 4], u_life)
            d = b + life
            if d > horizon:
                z[i] += 1
                continue
            events += 1
            if events > budget:
                return z[0], z[1], events, True
            j = _pick(cum[i], nout[i], u_off)
            k1 = kids[i, j, 0]
            k2 = kids[i, j, 1]
            need = sp + k1 + k2
            if need > cap:
                while cap < need:
                    cap *= 2
                nt = np.empty(cap)
                ny = np.empty(cap, dtype=np.int64)
                nt[:sp] = s_time[:sp]
                ny[:sp] = s_type[:sp]
                s_time = nt
                s_type = ny
            for _k in range(k1):
                s_time[sp] = d
                s_type[sp] = 0
                sp += 1
            for _k in range(k2):
                s_time[sp] = d
                s_type[sp] = 1
                sp += 1
    return z[0], z[1], events, False


@nb.njit(cache=True)
def _batch(n_anc, anc_type, horizon, seed, rep0, n_rep, kinds, pars, cum, kids, nout, budget):
    z1 = np.empty(n_rep, dtype=np.int64)
    z2 = np.empty(n_rep, dtype=np.int64)
    ev = np.empty(n_rep, dtype=np.int64)
    tr = np.empty(n_rep, dtype=np.bool_)
    for r in range(n_rep):
        a, b, e, t = _one_replicate(n_anc, anc_type, horizon, seed, rep0 + r,
                                    kinds, pars, cum, kids, nout, budget)
        z1[r] = a
        z2[r] = b
        ev[r] = e
        tr[r] = t
    return z1, z2, ev, tr


# ---------------------------------------------------------------- public API

@dataclass(frozen=True)
class Stream:
    seed: int
    replicate: int = 0


@dataclass(frozen=True)
class PopulationSample:
    z1: int
    z2: int
    events: int
    truncated: bool = False


@dataclass(frozen=True)
class SimConfig:
    N: int
    t: float
    replicates: int
    seed: int = 0
    event_budget: int = DEFAULT_EVENT_BUDGET
    ancestor_type: int = 2  # 1 or 2

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.event_budget < 1:
            raise ValueError("event_budget must be >= 1")
        if self.ancestor_type not in (1, 2):
            raise ValueError("ancestor_type is 1 or 2")
        if self.t < 0 or self.N < 0:
            raise ValueError("N and t must be nonnegative")


@dataclass
class SampleBatch:
    """Column-wise outcome of simulate_batch; truncated replicates are kept but flagged."""

    z1: np.ndarray
    z2: np.ndarray
    events: np.ndarray
    truncated: np.ndarray

    def __len__(self):
        return len(self.z1)

    @property
    def truncation_count(self) -> int:
        return int(self.truncated.sum())

    @property
    def truncation_fraction(self) -> float:
        return self.truncation_count / max(len(self), 1)

    @property
    def valid(self) -> bool:
        return self.truncation_fraction <= MAX_TRUNCATION

    def usable(self) -> "SampleBatch":
        keep = ~self.truncated
        return SampleBatch(self.z1[keep], self.z2[keep], self.events[keep], self.truncated[keep])

    def to_samples(self) -> list:
        return [PopulationSample(int(a), int(b), int(e), bool(t))
                for a, b, e, t in zip(self.z1, self.z2, self.events, self.truncated)]

    @classmethod
    def concat(cls, parts) -> "SampleBatch":
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("z1", "z2", "events", "truncated")))


def simulate_population(model: BranchingModel, N: int, t: float, stream: Stream,
                        event_budget: int = DEFAULT_EVENT_BUDGET,
                        ancestor_type: int = 2) -> PopulationSample:
    arrays = _model_arrays(model)
    a, b, e, tr = _one_replicate(int(N), ancestor_type - 1, float(t), np.uint64(stream.seed),
                                 np.uint64(stream.replicate), *arrays, int(event_budget))
    return PopulationSample(int(a), int(b), int(e), bool(tr))


def simulate_batch(model: BranchingModel, config: SimConfig, first_replicate: int = 0,
                   count: int | None = None) -> SampleBatch:
    """Replicates [first_replicate, first_replicate + count) of the configured experiment.

    Replicate r always uses stream (seed, r), so any split into chunks concatenates
    to the same result as one call.
    """
    if count is None:
        count = config.replicates - first_replicate
    arrays = _model_arrays(model)
    z1, z2, ev, tr = _batch(int(config.N), config.ancestor_type - 1, float(config.t),
                            np.uint64(config.seed), np.uint64(first_replicate), int(count),
                            *arrays, int(config.event_budget))
    return SampleBatch(z1, z2, ev, tr)
