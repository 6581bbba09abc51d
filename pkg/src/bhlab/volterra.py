"""Renewal and generating-function equations on a uniform time grid.

All convolutions use left-endpoint Stieltjes masses: the step mass
dG_k = G(t_k) - G(t_{k-1}) sits at t_k (k >= 1). The scheme is therefore the
exact solution for the process whose lifetimes are rounded up to the grid, and
its error is first order in h. `richardson` removes the leading term.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba as nb
import numpy as np

from .model import BranchingModel

MAX_STEP_MASS = 0.5
MAX_POINTS = 40_001


class GridTooCoarse(ValueError):
    pass


class ScalingTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    h: float
    n_points: int

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid step must be positive")
        if self.n_points < 2:
            raise ValueError("grid needs at least two points")

    @classmethod
    def from_horizon(cls, horizon: float, h: float) -> "TimeGrid":
        n = int(round(horizon / h))
        if abs(n * h - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"horizon {horizon} is not a multiple of h={h}")
        return cls(h, n + 1)

    @property
    def horizon(self) -> float:
        return self.h * (self.n_points - 1)

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.n_points)

    def refined(self) -> "TimeGrid":
        return TimeGrid(self.h / 2, 2 * self.n_points - 1)

    def index(self, t: float) -> int:
        k = int(round(t / self.h))
        if abs(k * self.h - t) > 1e-9 * max(1.0, t) or not 0 <= k < self.n_points:
            raise ValueError(f"t={t} is not a grid point")
        return k


@dataclass
class GridFunction:
    """Values on a TimeGrid; leading axis is time, trailing axes are (2,) or (2, 2)."""

    grid: TimeGrid
    values: np.ndarray
    increments: Optional[np.ndarray] = None
    name: str = ""
    clamps: int = 0

    def __post_init__(self):
        if self.increments is None:
            inc = np.diff(self.values, axis=0, prepend=self.values[:1] * 0)
            self.increments = inc

    def __call__(self, t):
        """Linear interpolation in t (t inside the grid)."""
        t = np.asarray(t, dtype=float)
        x = t / self.grid.h
        if np.any(x < -1e-9) or np.any(x > self.grid.n_points - 1 + 1e-9):
            raise ValueError("t outside grid")
        k = np.clip(np.floor(x).astype(int), 0, self.grid.n_points - 2)
        w = (x - k).reshape(k.shape + (1,) * (self.values.ndim - 1))
        return (1 - w) * self.values[k] + w * self.values[k + 1]

    def at(self, t: float) -> np.ndarray:
        return self.values[self.grid.index(t)]

    def to_csv(self, path, every: int = 1):
        flat = self.values.reshape(len(self.values), -1)
        if self.values.ndim == 3:
            cols = [f"{self.name}{i + 1}{j + 1}" for i in range(2) for j in range(2)]
        else:
            cols = [f"{self.name}{i + 1}" for i in range(flat.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + cols)
            for k in range(0, len(flat), every):
                w.writerow([repr(float(self.grid.times[k]))] + [repr(float(x)) for x in flat[k]])


def richardson(coarse: GridFunction, fine: GridFunction) -> GridFunction:
    """2 F_{h/2} - F_h on the coarse grid (removes the O(h) term)."""
    if not math.isclose(fine.grid.h * 2, coarse.grid.h) or \
            fine.grid.n_points != 2 * coarse.grid.n_points - 1:
        raise ValueError("fine grid must be the refinement of the coarse one")
    vals = 2 * fine.values[::2] - coarse.values
    return GridFunction(coarse.grid, vals, name=coarse.name)


def extrapolate(solver: Callable[[TimeGrid], GridFunction], grid: TimeGrid) -> GridFunction:
    return richardson(solver(grid), solver(grid.refined()))


# ---------------------------------------------------------------- grid masses

def lifetime_masses(model: BranchingModel, grid: TimeGrid, check: bool = True):
    """Tails 1-G_i(t_n) and step masses dG_i, arrays of shape (2, n_points)."""
    t = grid.times
    tail = np.vstack([np.asarray(law.tail(t), dtype=float) for law in model.lifetimes])
    tail[:, 0] = 1.0
    dG = np.zeros_like(tail)
    dG[:, 1:] = tail[:, :-1] - tail[:, 1:]
    if check:
        worst = dG.max(axis=1)
        if np.any(worst > MAX_STEP_MASS):
            i = int(np.argmax(worst))
            raise GridTooCoarse(f"step mass {worst[i]:.3f} of G{i + 1} exceeds {MAX_STEP_MASS} "
                                f"at h={grid.h}")
    if grid.n_points > MAX_POINTS:
        raise GridTooCoarse(f"{grid.n_points} grid points exceeds cap {MAX_POINTS}")
    return tail, dG


# ---------------------------------------------------------------- renewal

@nb.njit(cache=True)
def _renewal_kernel(M, dG, n):
    # rev[.., N - k] holds V(t_k) = M U(t_k) row-wise, so sums run forward in memory
    U = np.zeros((n, 2, 2))
    UI = np.zeros((n, 2, 2))
    Vrev = np.zeros((2, 2, n))
    Urev = np.zeros((2, 2, n))
    last = n - 1
    for step in range(n):
        base = last - step + 1  # Vrev[base + k - 1] is V(t_{step - k})
        for i in range(2):
            for j in range(2):
                acc = 1.0 if i == j else 0.0
                acc_i = 0.0
                for k in range(1, step + 1):
                    acc += dG[i, k] * Vrev[i, j, base + k - 1]
                    acc_i += dG[j, k] * Urev[i, j, base + k - 1]
                U[step, i, j] = acc
                UI[step, i, j] = acc_i
        for i in range(2):
            for j in range(2):
                Vrev[i, j, last - step] = M[i, 0] * U[step, 0, j] + M[i, 1] * U[step, 1, j]
                Urev[i, j, last - step] = U[step, i, j]
    return U, UI


def renewal_matrix(model: BranchingModel, grid: TimeGrid):
    """(U, U_I) with U = I + M*U and U_I = U*G_I on the grid."""
    _, dG = lifetime_masses(model, grid)
    U, UI = _renewal_kernel(model.mean_matrix, dG, grid.n_points)
    return GridFunction(grid, U, name="U"), GridFunction(grid, UI, name="UI")


def mean_matrix(model: BranchingModel, grid: TimeGrid, renewal=None) -> GridFunction:
    """P(t) = U(t) - U*G_I(t), i.e. P_ij(t) = E_i Z_j(t)."""
    U, UI = renewal if renewal is not None else renewal_matrix(model, grid)
    return GridFunction(grid, U.values - UI.values, name="P")


# ---------------------------------------------------------------- generating system

def _offspring_arrays(model: BranchingModel):
    width = max(len(law.outcomes) for law in model.offspring)
    kids = np.zeros((2, width, 2))
    probs = np.zeros((2, width))
    for i, law in enumerate(model.offspring):
        n = len(law.outcomes)
        kids[i, :n] = law.counts
        probs[i, :n] = law.probs
    return kids, probs


@nb.njit(cache=True)
def _one_minus_f(q0, q1, kids, probs, i):
    # 1 - f_i(1 - q) without cancellation
    l0 = math.log1p(-q0) if q0 < 1.0 else -np.inf
    l1 = math.log1p(-q1) if q1 < 1.0 else -np.inf
    acc = 0.0
    for r in range(probs.shape[1]):
        p = probs[i, r]
        if p == 0.0:
            continue
        a = kids[i, r, 0]
        b = kids[i, r, 1]
        x = 0.0
        if a > 0:
            x += a * l0
        if b > 0:
            x += b * l1
        acc += p * (-math.expm1(x))
    return acc


@nb.njit(cache=True)
def _q_kernel(q0, tail, dG, kids, probs, n):
    """Q(t_n) = q0 (1-G(t_n)) + sum_k (1 - f(1 - Q(t_{n-k}))) dG_k for a batch of q0 rows."""
    m = q0.shape[0]
    Q = np.zeros((m, n, 2))
    Grev = np.zeros((m, 2, n))  # Grev[.., last - k] = 1 - f(1 - Q(t_k))
    last = n - 1
    clamps = 0
    for step in range(n):
        base = last - step + 1
        for r in range(m):
            for i in range(2):
                acc = q0[r, i] * tail[i, step]
                for k in range(1, step + 1):
                    acc += dG[i, k] * Grev[r, i, base + k - 1]
                if acc < 0.0:
                    acc = 0.0
                    clamps += 1
                elif acc > 1.0:
                    acc = 1.0
                    clamps += 1
                Q[r, step, i] = acc
            for i in range(2):
                Grev[r, i, last - step] = _one_minus_f(Q[r, step, 0], Q[r, step, 1], kids, probs, i)
    return Q, clamps


def _solve_q(model: BranchingModel, grid: TimeGrid, one_minus_s: np.ndarray):
    tail, dG = lifetime_masses(model, grid)
    kids, probs = _offspring_arrays(model)
    q0 = np.atleast_2d(np.asarray(one_minus_s, dtype=float))
    return _q_kernel(q0, tail, dG, kids, probs, grid.n_points)


@dataclass
class GeneratingSolution:
    s: tuple
    F: GridFunction
    Q: GridFunction

    @property
    def clamps(self) -> int:
        return self.Q.clamps


def solve_generating_system(model: BranchingModel, s, grid: TimeGrid) -> GeneratingSolution:
    """F_i(t; s) = E_i s^Z(t) for the single-ancestor process, with Q = 1 - F."""
    s = np.asarray(s, dtype=float)
    if s.shape != (2,) or np.any(s < 0) or np.any(s > 1):
        raise ValueError("s must be a pair in [0,1]^2")
    Q, clamps = _solve_q(model, grid, 1.0 - s)
    q = GridFunction(grid, Q[0], name="Q", clamps=clamps)
    f = GridFunction(grid, 1.0 - Q[0], name="F", clamps=clamps)
    return GeneratingSolution(tuple(s), f, q)


def solve_generating_batch(model: BranchingModel, s_list, grid: TimeGrid):
    """Q curves for several s at once; returns array (len(s_list), n_points, 2) and clamp count."""
    s = np.atleast_2d(np.asarray(s_list, dtype=float))
    return _solve_q(model, grid, 1.0 - s)


def survival_probability(model: BranchingModel, grid: TimeGrid) -> GridFunction:
    """Q_i(t) = P_i(Z(t) != 0)."""
    return solve_generating_system(model, (0.0, 0.0), grid).Q


def weighted_Q(model: BranchingModel, grid: TimeGrid, lam: float,
               psi: Callable[[np.ndarray], np.ndarray], u: np.ndarray, v: np.ndarray,
               times=None):
    """Curve t -> (v, Q(t; 1 - lam u psi(t))) at the requested grid times.

    Each time point needs its own solve; they share one batched pass up to the
    largest requested time.
    """
    if times is None:
        times = grid.times[1:][np.unique(np.geomspace(1, grid.n_points - 1, 12).astype(int)) - 1]
    times = np.asarray(times, dtype=float)
    idx = np.array([grid.index(t) for t in times])
    qs = lam * np.outer(np.asarray(psi(times), dtype=float), u)
    if np.any(qs < 0) or np.any(qs > 1):
        raise ScalingTooLarge("1 - lam u psi(t) leaves [0,1]^2")
    if lam == 0:
        return times, np.zeros(len(times))
    sub = TimeGrid(grid.h, int(idx.max()) + 1)
    Q, _ = _solve_q(model, sub, qs)
    vals = np.array([Q[r, idx[r]] @ v for r in range(len(idx))])
    return times, vals
