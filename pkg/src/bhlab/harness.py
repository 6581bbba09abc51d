"""Monte Carlo verification: simulate, estimate the scaled Laplace transform,
compare with the predicted limit, and write CSV/JSON reports."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .limits import THEOREMS, o_functional, predict_limit, solve_H, solve_theta
from .model import DerivedConstants, derive_constants, load_model
from .regimes import Thresholds, classify_regime
from .sim import DEFAULT_EVENT_BUDGET, SampleBatch, SimConfig, simulate_batch
from .volterra import TimeGrid

CSV_COLUMNS = ["theorem", "beta", "N", "t", "lambda1", "lambda2", "empirical", "stderr",
               "predicted", "gap", "pass"]
TYPE1_FACTOR = 5.0
PGF_THEOREMS = ("Z12",)
POLICY_NOTE = ("pass iff |empirical - predicted| <= max(z*stderr, allowance); the allowance and "
               "the sweep-trend rule are finite-size surrogates, the limit theorems give no rates")


class EmptyRun(ValueError):
    pass


class RegimeMismatch(ValueError):
    pass


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    """One scenario or a sweep along a regime curve.

    `points` lists explicit (N, t); alternatively `schedule` = {"curve": "mu2"|"R"|"final",
    "value": ratio or list, "N": [...]} solves t for each N so that mu2(t)/N, R(t)/N or
    N sqrt((v2 u2 / B)(1 - G2(t))) equals the value. `args` are (lambda1, lambda2) pairs;
    for Z12 the second entry is the pgf argument s, for T2 the first entry is s.
    """

    model: str
    theorem: str
    args: list = field(default_factory=lambda: [[1.0, 1.0]])
    points: list = field(default_factory=list)
    schedule: Optional[dict] = None
    replicates: int = 10_000
    seed: int = 0
    z: float = 4.0
    allowance: float = 0.03
    d_convention: str = "paper"
    event_budget: int = DEFAULT_EVENT_BUDGET
    psi_gamma: float = 0.25
    z1_zero: bool = False
    name: str = ""

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ValueError(f"unknown theorem {self.theorem!r}")
        if self.replicates < 0:
            raise ValueError("replicates must be nonnegative")
        for a in self.args:
            if len(a) != 2 or min(a) < 0:
                raise ValueError(f"argument pair {a} must be two nonnegative numbers")
        if self.theorem == "Z12" and any(a[1] > 1 for a in self.args):
            raise ValueError("Z12 pgf arguments must lie in [0, 1]")
        if not self.points and not self.schedule:
            raise ValueError("config needs points or a schedule")
        if not 0.0 <= self.psi_gamma < 1.0:
            raise ValueError("psi exponent gamma must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict, base: Optional[Path] = None) -> "ExperimentConfig":
        d = dict(d)
        if base is not None and not Path(d["model"]).is_absolute():
            d["model"] = str((base / d["model"]).resolve())
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        body = dict(self.to_dict())
        body["model"] = Path(self.model).read_text()  # content, not location
        blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- scheduling

def curve_value(c: DerivedConstants, curve: str, N: float, t: float) -> float:
    if curve == "mu2":
        return float(c.mu2(t)) / N
    if curve == "R":
        return float(c.R(t)) / N
    if curve == "final":
        return float(c.final_scale(N, t))
    raise ValueError(f"unknown curve {curve!r}")


def t_on_curve(c: DerivedConstants, curve: str, value: float, N: float) -> float:
    """Horizon t at which the curve ratio equals value for this N (monotone in t)."""
    f = lambda x: math.log(curve_value(c, curve, N, math.exp(x))) - math.log(value)
    lo, hi = -20.0, 200.0
    if f(lo) * f(hi) > 0:
        raise ValueError(f"no t puts {curve} at {value} for N={N}")
    return math.exp(brentq(f, lo, hi, xtol=1e-12))


def resolve_points(cfg: ExperimentConfig, c: DerivedConstants) -> list:
    if cfg.points:
        return [(int(N), float(t)) for N, t in cfg.points]
    sch = cfg.schedule
    Ns = sch["N"]
    vals = sch["value"] if isinstance(sch["value"], list) else [sch["value"]] * len(Ns)
    return [(int(N), t_on_curve(c, sch["curve"], v, N)) for N, v in zip(Ns, vals)]


# ---------------------------------------------------------------- estimation

def _columns(samples):
    if isinstance(samples, SampleBatch):
        use = samples.usable()
        return use.z1.astype(float), use.z2.astype(float)
    z = [(s.z1, s.z2) for s in samples if not getattr(s, "truncated", False)]
    if not z:
        return np.zeros(0), np.zeros(0)
    arr = np.asarray(z, dtype=float)
    return arr[:, 0], arr[:, 1]


def empirical_laplace(samples, a1: float, a2: float, lam1: float, lam2: float,
                      z1_zero: bool = False):
    """Mean and standard error of exp(-lam1 a1 z1 - lam2 a2 z2) over non-truncated samples.

    Coefficients may be infinite (pgf at s = 0); a zero count then contributes nothing.
    """
    z1, z2 = _columns(samples)
    n = len(z1)
    if n == 0:
        raise EmptyRun("no usable samples")
    k1, k2 = lam1 * a1, lam2 * a2
    with np.errstate(invalid="ignore"):  # inf * 0 is masked by the where
        e1 = np.where(z1 == 0, 0.0, k1 * z1) if k1 else 0.0
        e2 = np.where(z2 == 0, 0.0, k2 * z2) if k2 else 0.0
    x = np.exp(-(e1 + e2)) * np.ones(n)
    if z1_zero:
        x = x * (z1 == 0)
    mean = float(x.mean())
    se = float(x.std() / math.sqrt(n))  # plug-in standard deviation
    return mean, se


def _neg_log(s: float) -> float:
    return math.inf if s == 0 else -math.log(s)


def scalings(theorem: str, c: DerivedConstants, N: int, t: float, arg, psi_gamma: float):
    """(k1, k2): the statistic is exp(-k1 Z1 - k2 Z2) for argument pair arg."""
    x1, x2 = arg
    mu2, R = float(c.mu2(t)), float(c.R(t))
    if theorem == "T1":
        return x1 * mu2 / N, x2 / N
    if theorem in ("C1", "T3"):
        return 0.0, x2 / N
    if theorem == "T2":
        return _neg_log(x1), x2 / N
    if theorem == "T4":
        return 0.0, x2 * (N / R) / N
    if theorem == "T5":
        return x1 * mu2 / (c.mu1 * R), x2 / R
    if theorem == "T6":
        return 0.0, x2 * c.u[1] * t ** (-psi_gamma)
    if theorem == "Z12":
        return 0.0, _neg_log(x2)
    raise ValueError(theorem)


def r_parameter(theorem: str, c: DerivedConstants, N: int, t: float, psi_gamma: float) -> float:
    if theorem == "T2":
        return N / float(c.mu2(t))
    if theorem in ("T4", "T5"):
        return N / float(c.R(t))
    if theorem == "T6":
        return N * math.sqrt(c.v[1] * c.u[1] / c.B * t ** (-psi_gamma) * float(c.tail2(t)))
    if theorem == "Z12":
        return float(c.final_scale(N, t))
    return 1.0


class Predictor:
    """Solves the limit objects a theorem needs once, then evaluates per point."""

    def __init__(self, cfg: ExperimentConfig, model, c: DerivedConstants):
        self.cfg, self.c = cfg, c
        self.theta = self.h = None
        self.o = {}
        th = cfg.theorem
        if th == "T4":
            top = max(a[1] for a in cfg.args) ** (1 / c.beta)
            self.theta = solve_theta(c, extend_to=max(top, 1e-3))
        elif th == "T5":
            pos = [a[0] for a in cfg.args if a[0] > 0]
            top = max(pos) ** (1 / (2 * c.beta - 1)) if pos else 1.0
            self.h = solve_H(c, extend_to=top)
        elif th == "T2":
            grid = TimeGrid(0.5, 40_001)
            for s in {a[0] for a in cfg.args}:
                self.o[s] = o_functional(model, c, grid, s)

    def __call__(self, N, t, arg) -> float:
        cfg, c = self.cfg, self.c
        r = r_parameter(cfg.theorem, c, N, t, cfg.psi_gamma)
        x1, x2 = arg
        th = cfg.theorem
        if th == "T1":
            return predict_limit("T1", c, lam1=x1, lam2=x2)
        if th in ("C1", "T3", "T6"):
            return predict_limit(th, c, lam=x2, r=r)
        if th == "T2":
            return predict_limit("T2", c, s=x1, lam=x2, r=r, o_value=self.o[x1])
        if th == "T4":
            return predict_limit("T4", c, lam=x2, r=r, theta=self.theta)
        if th == "T5":
            return predict_limit("T5", c, lam1=x1, lam2=x2, r=r, h=self.h)
        return predict_limit("Z12", c, s=x2, r=r)


# ---------------------------------------------------------------- report

@dataclass
class Row:
    theorem: str
    beta: float
    N: int
    t: float
    lambda1: float
    lambda2: float
    empirical: float
    stderr: float
    predicted: float
    gap: float
    passed: bool

    def csv_values(self):
        f = lambda x: repr(float(x))
        return [self.theorem, f(self.beta), str(self.N), f(self.t), f(self.lambda1),
                f(self.lambda2), f(self.empirical), f(self.stderr), f(self.predicted), f(self.gap),
                "1" if self.passed else "0"]


def trend_ok(gaps, inversions_allowed: int = 1) -> bool:
    ups = sum(1 for a, b in zip(gaps, gaps[1:]) if b > a)
    return ups <= inversions_allowed


@dataclass
class Report:
    config_hash: str
    theorem: str
    rows: list
    points: list
    trend: dict
    truncation: list
    regimes: list
    type1: list
    warnings: list
    runtimes: dict
    d_convention: str
    policy: str = POLICY_NOTE

    @property
    def final_rows(self):
        N, t = self.points[-1]
        return [r for r in self.rows if r.N == N and r.t == t]

    @property
    def passed(self) -> bool:
        ok = all(r.passed for r in self.final_rows) and all(self.trend.values())
        return ok and all(x["ok"] for x in self.type1 if x["enforced"])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(r.csv_values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float))


# ---------------------------------------------------------------- runner

def _check_regime(cfg, c, N, t, warnings):
    lab = classify_regime(c, N, t, Thresholds())
    if lab.stage == "Extinction" and cfg.theorem != "Z12":
        raise RegimeMismatch(f"(N={N}, t={t:.4g}) is in the extinction range, not {cfg.theorem}")
    family = {"C1": ("T1", "T2", "T3"), "T3": ("T3",), "Z12": ("Z12", "T6")}
    allowed = family.get(cfg.theorem, (cfg.theorem,))
    if lab.theorem not in allowed:
        warnings.append(f"(N={N}, t={t:.6g}) classified {lab.stage}/{lab.theorem}, "
                        f"config says {cfg.theorem}")
    return asdict(lab)


def _simulate(model, sc: SimConfig, cache, model_key):
    if cache is None:
        return simulate_batch(model, sc)
    key = (model_key, sc)
    if key not in cache:
        cache[key] = simulate_batch(model, sc)
    return cache[key]


def run_experiment(cfg: ExperimentConfig, progress=None, cache: Optional[dict] = None) -> Report:
    """Run every point of the config. `cache` (a dict) shares simulated batches between
    runs that differ only in how predictions are made, e.g. the D convention."""
    if cfg.replicates < 1:
        raise EmptyRun("replicates = 0")
    model = load_model(cfg.model)
    c = derive_constants(model, cfg.d_convention)
    points = resolve_points(cfg, c)
    t0 = time.perf_counter()
    predictor = Predictor(cfg, model, c)
    runtimes = {"solve": time.perf_counter() - t0, "simulate": 0.0}
    rows, truncation, regimes, type1, warnings = [], [], [], [], []
    for k, (N, t) in enumerate(points):
        regimes.append(_check_regime(cfg, c, N, t, warnings))
        sc = SimConfig(N=N, t=t, replicates=cfg.replicates, seed=(cfg.seed << 8) + k,
                       event_budget=cfg.event_budget)
        t1 = time.perf_counter()
        batch = _simulate(model, sc, cache, Path(cfg.model).read_text())
        runtimes["simulate"] += time.perf_counter() - t1
        truncation.append(batch.truncation_fraction)
        if not batch.valid:
            warnings.append(f"(N={N}, t={t:.6g}) truncation {batch.truncation_fraction:.2%} > 1%")
        # lambda = 0 self-check: both sides must be exactly 1
        if empirical_laplace(batch, 1.0, 1.0, 0.0, 0.0) != (1.0, 0.0):
            raise RuntimeError("empirical transform at lambda = 0 is not exactly 1")
        zero_arg = (0.0, 1.0) if cfg.theorem == "Z12" else (0.0, 0.0)
        if cfg.theorem != "T2" and predictor(N, t, zero_arg) != 1.0:
            raise RuntimeError("predicted transform at lambda = 0 is not exactly 1")
        use = batch.usable()
        p1 = float(np.mean(use.z1 > 0)) if len(use) else math.nan
        bound = TYPE1_FACTOR * N / float(c.mu2(t))
        type1.append({"N": N, "t": t, "p_type1": p1, "bound": bound, "ok": p1 <= bound,
                      "enforced": cfg.theorem in ("T3", "T4", "T6") and cfg.z1_zero})
        for arg in cfg.args:
            k1, k2 = scalings(cfg.theorem, c, N, t, arg, cfg.psi_gamma)
            emp, se = empirical_laplace(use, k1, k2, 1.0, 1.0, cfg.z1_zero)
            pred = predictor(N, t, arg)
            gap = abs(emp - pred)
            rows.append(Row(cfg.theorem, c.beta, N, t, float(arg[0]), float(arg[1]), emp, se,
                            pred, gap, gap <= max(cfg.z * se, cfg.allowance)))
        if progress:
            progress(f"point {k + 1}/{len(points)} N={N} t={t:.6g} done")
    trend = {}
    if len(points) > 1:
        for arg in cfg.args:
            gaps = [r.gap for r in rows if (r.lambda1, r.lambda2) == (float(arg[0]), float(arg[1]))]
            trend[f"{arg[0]},{arg[1]}"] = trend_ok(gaps)
    return Report(config_hash=cfg.hash(), theorem=cfg.theorem, rows=rows,
                  points=[[N, t] for N, t in points], trend=trend, truncation=truncation,
                  regimes=regimes, type1=type1, warnings=warnings, runtimes=runtimes,
                  d_convention=cfg.d_convention)


def write_outputs(report: Report, out_dir, stem: str = "report"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / f"{stem}.csv")
    report.write_json(out / f"{stem}.json")
    return out / f"{stem}.csv", out / f"{stem}.json"
