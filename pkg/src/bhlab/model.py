"""Two-type Bellman-Harris model: offspring laws, lifetime laws, derived constants."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy import integrate

PERRON_TOL = 1e-9
PROB_TOL = 1e-12

# integer tags shared with the numba kernels in sim.py
LIFE_EXPONENTIAL = 0
LIFE_UNIFORM = 1
LIFE_PARETO_CONST = 2
LIFE_PARETO_LOG = 3


class NonCriticalMatrix(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------- offspring

@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support joint law of (type-1 children, type-2 children)."""

    outcomes: tuple  # ((k1, k2), p) pairs in declaration order

    def __post_init__(self):
        outs = tuple(((int(k[0]), int(k[1])), float(p)) for k, p in self.outcomes)
        if not outs:
            raise ModelFormatError("offspring law needs at least one outcome")
        for (k1, k2), p in outs:
            if k1 < 0 or k2 < 0:
                raise ModelFormatError("negative offspring count")
        object.__setattr__(self, "outcomes", outs)

    @property
    def counts(self) -> np.ndarray:
        return np.array([k for k, _ in self.outcomes], dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.outcomes], dtype=float)

    def pgf(self, s1, s2):
        s1 = np.asarray(s1, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        out = np.zeros(np.broadcast(s1, s2).shape)
        for (k1, k2), p in self.outcomes:
            out = out + p * s1**k1 * s2**k2
        return out

    def means(self) -> np.ndarray:
        """First moments (E xi_1, E xi_2)."""
        return self.probs @ self.counts

    def second_derivatives(self) -> np.ndarray:
        """Matrix of d^2 f / ds_j ds_k at s = 1 (factorial moments on the diagonal)."""
        k = self.counts.astype(float)
        p = self.probs
        b = np.empty((2, 2))
        for j in range(2):
            for m in range(2):
                if j == m:
                    b[j, m] = p @ (k[:, j] * (k[:, j] - 1))
                else:
                    b[j, m] = p @ (k[:, j] * k[:, m])
        return b


# ---------------------------------------------------------------- lifetimes

@dataclass(frozen=True)
class Constant:
    c: float = 1.0

    def __call__(self, t):
        return self.c * np.ones_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class LogPower:
    """ell(t) = c * (ln(e + t))**p"""

    c: float = 1.0
    p: float = 1.0

    def __call__(self, t):
        return self.c * np.log(math.e + np.asarray(t, dtype=float)) ** self.p


SlowlyVarying = Union[Constant, LogPower]


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= 0, 1.0, np.exp(-self.rate * np.maximum(t, 0.0)))

    def truncated_mean(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return -np.expm1(-self.rate * t) / self.rate

    def quantile(self, u):
        return -np.log1p(-np.asarray(u, dtype=float)) / self.rate

    def numba_params(self):
        return LIFE_EXPONENTIAL, (self.rate, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class UniformLife:
    a: float = 0.0
    b: float = 2.0

    @property
    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip((self.b - t) / (self.b - self.a), 0.0, 1.0)

    def truncated_mean(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        a, b = self.a, self.b
        below = np.minimum(t, a)
        mid = np.clip(t, a, b)
        # integral of (b - w)/(b - a) over [a, mid]
        part = ((b - a) ** 2 - (b - mid) ** 2) / (2.0 * (b - a))
        return below + part

    def quantile(self, u):
        return self.a + (self.b - self.a) * np.asarray(u, dtype=float)

    def numba_params(self):
        return LIFE_UNIFORM, (self.a, self.b, 0.0, 0.0)


@dataclass(frozen=True)
class ParetoTail:
    """Tail 1 - G(t) = ell(t) t^-beta for t >= t0, and 1 below t0.

    If ell(t0) t0^-beta < 1 the law has an atom at t0.
    """

    beta: float = 0.5
    t0: float = 1.0
    ell: SlowlyVarying = field(default_factory=Constant)

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        safe = np.maximum(t, self.t0)
        return np.where(t < self.t0, 1.0, self.ell(safe) * safe ** (-self.beta))

    def _tail_integral(self, t: float) -> float:
        """Integral of ell(w) w^-beta over [t0, t]."""
        if t <= self.t0:
            return 0.0
        b, t0 = self.beta, self.t0
        if isinstance(self.ell, Constant):
            c = self.ell.c
            if b == 1.0:
                return c * math.log(t / t0)
            return c * (t ** (1 - b) - t0 ** (1 - b)) / (1 - b)
        # log-substitution w = e^x keeps the integrand smooth over many decades
        f = lambda x: float(self.ell(math.exp(x))) * math.exp((1 - b) * x)
        val, _ = integrate.quad(f, math.log(t0), math.log(t), limit=200)
        return val

    def truncated_mean(self, t):
        t_arr = np.asarray(t, dtype=float)
        if isinstance(self.ell, Constant):
            b, t0, c = self.beta, self.t0, self.ell.c
            x = np.maximum(t_arr, t0)
            if b == 1.0:
                extra = c * np.log(x / t0)
            else:
                extra = c * (x ** (1 - b) - t0 ** (1 - b)) / (1 - b)
            out = np.minimum(t_arr, t0) + extra
            return float(out) if out.ndim == 0 else out
        flat = np.array([min(x, self.t0) + self._tail_integral(x) if np.isfinite(x)
                         else self.total_mean() for x in t_arr.ravel()])
        out = flat.reshape(t_arr.shape)
        return float(out) if out.ndim == 0 else out

    def total_mean(self) -> float:
        """mu_2 = integral of the whole tail; inf unless beta = 1 with fast-decaying ell."""
        if self.beta < 1.0:
            return math.inf
        if isinstance(self.ell, Constant) or self.ell.p >= -1.0:
            return math.inf
        f = lambda x: float(self.ell(math.exp(x)))
        val, _ = integrate.quad(f, math.log(self.t0), math.inf, limit=400)
        return self.t0 + val

    @property
    def mean(self) -> float:
        return self.total_mean()

    def quantile(self, u):
        from .sim import pareto_quantile  # numba routine, shared with the kernel
        kind, par = self.numba_params()
        u = np.asarray(u, dtype=float)
        return np.vectorize(lambda x: pareto_quantile(kind, par[0], par[1], par[2], par[3], x))(u)

    def numba_params(self):
        if isinstance(self.ell, Constant):
            return LIFE_PARETO_CONST, (self.beta, self.t0, self.ell.c, 0.0)
        return LIFE_PARETO_LOG, (self.beta, self.t0, self.ell.c, self.ell.p)


LightTail = Union[Exponential, UniformLife]
LifetimeLaw = Union[Exponential, UniformLife, ParetoTail]


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class BranchingModel:
    offspring: tuple  # (OffspringLaw type 1, OffspringLaw type 2)
    lifetimes: tuple  # (light-tailed law type 1, ParetoTail type 2)

    @property
    def beta(self) -> float:
        return self.lifetimes[1].beta

    @property
    def mean_matrix(self) -> np.ndarray:
        return np.vstack([law.means() for law in self.offspring])

    @property
    def second_moments(self) -> np.ndarray:
        """b[i, j, k] = d^2 f_i / ds_j ds_k at 1."""
        return np.stack([law.second_derivatives() for law in self.offspring])

    def f(self, s1, s2):
        """Offspring generating functions (f_1(s), f_2(s))."""
        return self.offspring[0].pgf(s1, s2), self.offspring[1].pgf(s1, s2)

    def with_beta(self, beta: float) -> "BranchingModel":
        life2 = self.lifetimes[1]
        new = ParetoTail(beta=beta, t0=life2.t0, ell=life2.ell)
        return BranchingModel(self.offspring, (self.lifetimes[0], new))


def reference_model(beta: float = 0.5) -> BranchingModel:
    """f1(s) = s2 with Exp(1) lifetimes; f2(s) = (1 + s1 + s1 s2 + s2)/4 with tail min(1, t^-beta)."""
    f1 = OffspringLaw((((0, 1), 1.0),))
    f2 = OffspringLaw((((0, 0), 0.25), ((1, 0), 0.25), ((1, 1), 0.25), ((0, 1), 0.25)))
    return BranchingModel((f1, f2), (Exponential(1.0), ParetoTail(beta, 1.0, Constant(1.0))))


# ---------------------------------------------------------------- constants

def perron_root(M) -> float:
    M = np.asarray(M, dtype=float)
    tr = M[0, 0] + M[1, 1]
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    return 0.5 * tr + math.sqrt(max(0.25 * tr * tr - det, 0.0))


def perron_eigenvectors(M, tol: float = PERRON_TOL):
    """Right and left Perron vectors of a critical 2x2 mean matrix.

    Normalised so that v.1 = 1 and v.u = 1.
    """
    M = np.asarray(M, dtype=float)
    rho = perron_root(M)
    if abs(rho - 1.0) > tol:
        raise NonCriticalMatrix(f"Perron root {rho!r} differs from 1")
    m11, m12, m21 = M[0, 0], M[0, 1], M[1, 0]
    if m12 <= 0 or m21 <= 0:
        raise NonCriticalMatrix("mean matrix is decomposable")
    v = np.array([m21, 1.0 - m11])
    v = v / v.sum()
    u = np.array([m12, 1.0 - m11])
    u = u / (v @ u)
    return u, v


def constant_B(model: BranchingModel, u=None, v=None) -> float:
    if u is None or v is None:
        u, v = perron_eigenvectors(model.mean_matrix)
    b = model.second_moments
    return 0.5 * float(np.einsum("i,ijk,j,k->", v, b, u, u))


D_CONVENTIONS = ("paper", "renewal")


def matrix_D(M, mu1: float = None, mu2: float = math.inf, convention: str = "paper") -> np.ndarray:
    """Limit matrix of P(t) (second column) and of U(t) / (Gamma R(t)).

    "paper" uses diagonal entries built from 1 - m_ii. "renewal" uses 1 - m_jj
    (j != i), which equals u_i v_j / (u_2 v_2) and is what the renewal equation
    actually converges to; the two agree when m11 = m22.
    """
    if convention not in D_CONVENTIONS:
        raise ValueError(f"unknown D convention {convention!r}")
    if isinstance(M, BranchingModel):
        mu1, mu2 = M.lifetimes[0].mean, M.lifetimes[1].total_mean()
        M = M.mean_matrix
    M = np.asarray(M, dtype=float)
    m11, m12, m21, m22 = M[0, 0], M[0, 1], M[1, 0], M[1, 1]
    d1, d2 = (1.0 - m11, 1.0 - m22) if convention == "paper" else (1.0 - m22, 1.0 - m11)
    if math.isinf(mu2):
        return np.array([[d1, m12], [m21, d2]]) / (1.0 - m11)
    d = 1.0 / ((1.0 - m22) * mu1 + (1.0 - m11) * mu2)
    return mu2 * d * np.array([[d1, m12], [m21, d2]])


def gamma_beta(beta: float) -> float:
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"tail index {beta} outside (0, 1]")
    if beta == 1.0:
        return 1.0
    return math.sin(math.pi * beta) / (math.pi * beta * (1.0 - beta))


def mu2_and_R(law: ParetoTail, t):
    mu2 = law.truncated_mean(t)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(t > 0, t / np.where(t > 0, mu2, 1.0), 1.0)
    return mu2, (float(R) if np.ndim(R) == 0 else R)


@dataclass(frozen=True)
class DerivedConstants:
    M: np.ndarray
    u: np.ndarray
    v: np.ndarray
    B: float
    D: np.ndarray
    gamma_beta: float
    beta: float
    mu1: float
    mu2_total: float
    life2: ParetoTail
    b: np.ndarray  # b[i, j, k] second derivatives of f_i
    d_convention: str = "paper"

    @property
    def C_beta(self) -> np.ndarray:
        bg = self.beta * self.gamma_beta
        D = self.D
        return np.array([[D[0, 0] * bg, D[0, 1]], [D[1, 0] * bg, D[1, 1]]])

    def mu2(self, t):
        return self.life2.truncated_mean(t)

    def R(self, t):
        return mu2_and_R(self.life2, t)[1]

    def tail2(self, t):
        return self.life2.tail(t)

    def final_scale(self, N, t):
        """N sqrt((v2 u2 / B) (1 - G2(t))): the ratio that is r in the final stage."""
        return N * np.sqrt(self.v[1] * self.u[1] / self.B * self.tail2(t))


def derive_constants(model: BranchingModel, d_convention: str = "paper") -> DerivedConstants:
    M = model.mean_matrix
    u, v = perron_eigenvectors(M)
    B = constant_B(model, u, v)
    life1, life2 = model.lifetimes
    mu2_total = life2.total_mean()
    D = matrix_D(M, life1.mean, mu2_total, d_convention)
    return DerivedConstants(M=M, u=u, v=v, B=B, D=D, gamma_beta=gamma_beta(life2.beta),
                            beta=life2.beta, mu1=life1.mean, mu2_total=mu2_total, life2=life2,
                            b=model.second_moments, d_convention=d_convention)


# ---------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        return [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<22} {c.detail}" for c in self.checks]


def _hypothesis_a_constant(law: ParetoTail, deltas=(0.1, 1.0, 10.0)) -> float:
    """sup of (G(t+d) - G(t)) / (d ell(t) t^(-beta-1)) over a log grid of t >= 10 t0."""
    ts = np.logspace(math.log10(10 * law.t0), 12, 400)
    worst = 0.0
    for d in deltas:
        inc = law.tail(ts) - law.tail(ts + d)
        bound = d * law.ell(ts) * ts ** (-law.beta - 1.0)
        worst = max(worst, float(np.max(inc / bound)))
    return worst


def validate_model(model: BranchingModel) -> ValidationReport:
    checks = []
    for i, law in enumerate(model.offspring, start=1):
        total = law.probs.sum()
        ok = abs(total - 1.0) <= PROB_TOL and bool(np.all(law.probs >= 0))
        checks.append(Check(f"Probabilities{i}", ok, f"sum={total:.15g}"))

    M = model.mean_matrix
    rho = perron_root(M)
    checks.append(Check("Criticality", abs(rho - 1.0) <= PERRON_TOL, f"perron root={rho:.12g}"))
    irreducible = M[0, 1] > 0 and M[1, 0] > 0
    checks.append(Check("Indecomposability", bool(irreducible), f"m12={M[0, 1]:g} m21={M[1, 0]:g}"))
    M2 = M @ M
    checks.append(Check("Aperiodicity", bool(np.all(M + M2 > 0) and np.all(M2 > 0)),
                        f"min(M^2)={M2.min():g}"))

    life1, life2 = model.lifetimes
    light = isinstance(life1, (Exponential, UniformLife))
    if isinstance(life1, Exponential):
        light = light and life1.rate > 0
    if isinstance(life1, UniformLife):
        light = light and 0 <= life1.a < life1.b
    checks.append(Check("LightTail1", bool(light), type(life1).__name__))

    pareto = isinstance(life2, ParetoTail)
    beta = life2.beta if pareto else float("nan")
    checks.append(Check("TailIndexRange", pareto and 0.0 < beta <= 1.0, f"beta={beta:g}"))

    tail_ok = False
    if pareto and life2.t0 > 0:
        ts = life2.t0 * np.logspace(0, 14, 2000)
        tl = life2.tail(ts)
        tail_ok = bool(tl[0] <= 1.0 + 1e-15 and np.all(np.diff(tl) <= 1e-15) and np.all(tl > 0))
    checks.append(Check("TailShape", tail_ok, "tail <= 1 at t0 and nonincreasing"))

    if pareto and 0.0 < beta <= 0.5:
        C = _hypothesis_a_constant(life2)
        checks.append(Check("HypothesisA", bool(np.isfinite(C) and C <= 10.0), f"C={C:.4g}"))

    B = float("nan")
    try:
        B = constant_B(model)
    except NonCriticalMatrix:
        pass
    checks.append(Check("FiniteB", bool(np.isfinite(B) and B > 0), f"B={B:.12g}"))
    return ValidationReport(checks)


# ---------------------------------------------------------------- JSON io

def _ell_from_dict(d) -> SlowlyVarying:
    kind = d.get("kind", "constant")
    if kind == "constant":
        return Constant(float(d.get("c", 1.0)))
    if kind == "logpower":
        return LogPower(float(d.get("c", 1.0)), float(d["p"]))
    raise ModelFormatError(f"unknown slowly varying family {kind!r}")


def _life_from_dict(d) -> LifetimeLaw:
    kind = d["kind"]
    if kind == "exponential":
        return Exponential(float(d["rate"]))
    if kind == "uniform":
        return UniformLife(float(d["a"]), float(d["b"]))
    if kind == "pareto":
        return ParetoTail(float(d["beta"]), float(d.get("t0", 1.0)), _ell_from_dict(d.get("ell", {})))
    raise ModelFormatError(f"unknown lifetime family {kind!r}")


def _life_to_dict(law) -> dict:
    if isinstance(law, Exponential):
        return {"kind": "exponential", "rate": law.rate}
    if isinstance(law, UniformLife):
        return {"kind": "uniform", "a": law.a, "b": law.b}
    ell = ({"kind": "constant", "c": law.ell.c} if isinstance(law.ell, Constant)
           else {"kind": "logpower", "c": law.ell.c, "p": law.ell.p})
    return {"kind": "pareto", "beta": law.beta, "t0": law.t0, "ell": ell}


def model_from_dict(d: dict) -> BranchingModel:
    try:
        offspring = tuple(OffspringLaw(tuple((tuple(k), p) for k, p in o["outcomes"]))
                          for o in d["offspring"])
        lifetimes = tuple(_life_from_dict(x) for x in d["lifetimes"])
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model description: {exc}") from exc
    if len(offspring) != 2 or len(lifetimes) != 2:
        raise ModelFormatError("exactly two types are required")
    if "beta" in d and isinstance(lifetimes[1], ParetoTail):
        lifetimes = (lifetimes[0], ParetoTail(float(d["beta"]), lifetimes[1].t0, lifetimes[1].ell))
    return BranchingModel(offspring, lifetimes)


def model_to_dict(model: BranchingModel) -> dict:
    return {
        "offspring": [{"outcomes": [[list(k), p] for k, p in law.outcomes]} for law in model.offspring],
        "lifetimes": [_life_to_dict(x) for x in model.lifetimes],
    }


def load_model(path) -> BranchingModel:
    with open(Path(path)) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: BranchingModel, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
