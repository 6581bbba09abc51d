"""Evolutionary-stage geography: boundary functions g1, g2, g3 and the
(beta, N, t) -> theorem map.

Limits such as "R(t)/N -> 0" become threshold tests at finite (N, t): a ratio
below `lo` counts as vanishing, above `hi` as diverging, otherwise finite.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .model import Constant, DerivedConstants

LO, HI = 0.1, 10.0

STAGES = ("Early", "Intermediate", "Final", "Extinction")


@dataclass(frozen=True)
class Thresholds:
    lo: float = LO
    hi: float = HI

    def __post_init__(self):
        if not 0 < self.lo < 1 < self.hi:
            raise ValueError("need 0 < lo < 1 < hi")

    def level(self, x: float) -> str:
        if x < self.lo:
            return "zero"
        if x > self.hi:
            return "inf"
        return "finite"


@dataclass(frozen=True)
class RegimeLabel:
    stage: str
    theorem: str
    open_case: bool
    R_over_N: float
    mu2_over_N: float
    N_tail: float
    final_scale: float


def _boundary_functions(c: DerivedConstants):
    beta, ell = c.beta, c.life2.ell
    k = c.v[1] * c.u[1]
    n3 = lambda y: math.sqrt(c.B * y ** beta / (k * float(ell(y))))
    if beta == 1.0:
        # l1(y) taken as mu2(y), which it is asymptotic to
        n1 = lambda y: y / float(c.mu2(y))
        n2 = lambda y: float(c.mu2(y))
    else:
        n1 = lambda y: (1 - beta) * y ** beta / float(ell(y))
        n2 = lambda y: y ** (1 - beta) * float(ell(y)) / (1 - beta)
    return n1, n2, n3


def _invert(fn, N, lo=-60.0, hi=700.0):
    g = lambda x: math.log(fn(math.exp(x))) - math.log(N)
    a, b = g(lo), g(hi)
    if a > 0:
        return 0.0
    if b < 0:
        return math.inf
    return math.exp(brentq(g, lo, hi, xtol=1e-13, rtol=1e-14))


def g_thresholds(c: DerivedConstants, N: float):
    """(g1(N), g2(N), g3(N)); closed form for constant ell, root finding otherwise."""
    if N < 1:
        raise ValueError("N must be >= 1")
    beta, ell = c.beta, c.life2.ell
    if isinstance(ell, Constant) and beta < 1.0:
        a = ell.c
        g1 = (N * a / (1 - beta)) ** (1 / beta)
        g2 = (N * (1 - beta) / a) ** (1 / (1 - beta))
        g3 = (N * N * c.v[1] * c.u[1] * a / c.B) ** (1 / beta)
        return float(g1), float(g2), float(g3)
    return tuple(_invert(fn, N) for fn in _boundary_functions(c))


def boundary_values(c: DerivedConstants, y: float):
    """The functions N(y) whose inverses are g1, g2, g3."""
    return tuple(fn(y) for fn in _boundary_functions(c))


def classify_ratios(beta: float, R_over_N: float, mu2_over_N: float,
                    final_scale: Optional[float] = None, N_tail: float = math.nan,
                    thresholds: Thresholds = Thresholds()) -> RegimeLabel:
    """Tables 0-3 applied to the defining ratios.

    final_scale is N sqrt((v2 u2 / B)(1 - G2(t))); None means it is large
    (the run is nowhere near extinction).
    """
    fs = math.inf if final_scale is None else final_scale
    rl = thresholds.level(R_over_N)
    ml = thresholds.level(mu2_over_N)
    fl = thresholds.level(fs)

    def label(stage, theorem, open_case=False):
        return RegimeLabel(stage, theorem, open_case, R_over_N, mu2_over_N, N_tail, fs)

    if fl == "zero":
        return label("Extinction", "Z12")
    if rl == "inf":
        if fl == "finite":
            return label("Final", "Z12")
        # type-1 absence is only proven once mu2/N -> inf; Table 3 leaves it open
        return label("Final", "T6", open_case=(2 / 3 < beta < 1 and ml != "inf"))
    if rl == "finite":
        if beta < 0.5:
            return label("Intermediate", "T4")
        if beta > 0.5:
            return label("Intermediate", "T5")
        if ml == "inf":
            return label("Intermediate", "T4")
        if ml == "zero":
            return label("Intermediate", "T5")
        return label("Intermediate", "OpenCase", open_case=True)
    if beta <= 0.5:
        theorem = {"zero": "T1", "finite": "T2", "inf": "T3"}[ml]
        return label("Early", theorem)
    return label("Early", "T1")


def classify_regime(c: DerivedConstants, N: float, t: float,
                    thresholds: Thresholds = Thresholds()) -> RegimeLabel:
    mu2 = float(c.mu2(t))
    R = float(c.R(t))
    tail = float(c.tail2(t))
    fs = float(c.final_scale(N, t))
    return classify_ratios(c.beta, R / N, mu2 / N, fs, N * tail, thresholds)


def regime_map(c: DerivedConstants, Ns, ts, thresholds: Thresholds = Thresholds()):
    rows = []
    for N in Ns:
        for t in ts:
            lab = classify_regime(c, float(N), float(t), thresholds)
            rows.append({"N": float(N), "t": float(t), **asdict(lab)})
    return rows


def write_regime_map(path, rows):
    cols = ["N", "t", "stage", "theorem", "open_case", "R_over_N", "mu2_over_N", "N_tail",
            "final_scale"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def log_lattice(lo: float, hi: float, per_decade: int = 4) -> np.ndarray:
    n = max(2, int(round(math.log10(hi / lo) * per_decade)) + 1)
    return np.geomspace(lo, hi, n)
