"""Limit objects: the Theta/Omega and H fixed points, the O(s) functional, and
the limiting Laplace transforms of each regime.

Both fixed-point equations are of Volterra type in their first argument, so
Picard iteration converges on any bounded domain; the contraction domain is
still measured and reported because it certifies the first few steps.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .model import BranchingModel, DerivedConstants

N_GRID = 512
N_QUAD = 1024
KAPPA_MAX = 0.8
LAMBDA_FLOOR = 1e-3
EXTENSION_RESIDUAL = 1e-6


class ContractionFailed(RuntimeError):
    pass


class OutsideDomain(ValueError):
    pass


class BetaOutOfRange(ValueError):
    pass


class TailNotConverged(RuntimeError):
    pass


class MissingSolution(ValueError):
    pass


# ---------------------------------------------------------------- quadratic form

@dataclass(frozen=True)
class QuadraticForm:
    """N_i(x) = 1/2 sum_jk b^i_jk x_j x_k."""

    b: np.ndarray

    @classmethod
    def from_constants(cls, c: DerivedConstants) -> "QuadraticForm":
        return cls(np.asarray(c.b, dtype=float))

    @property
    def bbar(self) -> float:
        return float(self.b.max())

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("ijk,...j,...k->...i", self.b, x, x)


def phi(model: BranchingModel, q) -> np.ndarray:
    """Phi(q) = M q - (1 - f(1 - q)), the exact nonlinearity whose leading term is N(q)."""
    q = np.asarray(q, dtype=float)
    s = 1.0 - q
    f = np.stack([law.pgf(s[..., 0], s[..., 1]) for law in model.offspring], axis=-1)
    return q @ model.mean_matrix.T - (1.0 - f)


# ---------------------------------------------------------------- shared machinery

def _interp_matrix(sigma_grid: np.ndarray, sigma_pts: np.ndarray, weights: np.ndarray):
    """Dense A with (A g)_a = sum_q weights[a, q] * lininterp(g at sigma_pts[a, q])."""
    n = len(sigma_grid)
    ds = sigma_grid[1] - sigma_grid[0]
    x = np.clip(sigma_pts / ds, 0.0, n - 1)
    k = np.minimum(np.floor(x).astype(int), n - 2)
    frac = x - k
    rows = np.broadcast_to(np.arange(sigma_pts.shape[0])[:, None], sigma_pts.shape)
    A = np.zeros((sigma_pts.shape[0], n))
    np.add.at(A, (rows, k), weights * (1 - frac))
    np.add.at(A, (rows, k + 1), weights * frac)
    return A


def _interp(sigma_grid, values, sigma):
    """Linear interpolation of node values (n, ...) at scalar/array sigma."""
    n = len(sigma_grid)
    ds = sigma_grid[1] - sigma_grid[0]
    x = np.clip(np.asarray(sigma, dtype=float) / ds, 0.0, n - 1)
    k = np.minimum(np.floor(x).astype(int), n - 2)
    w = (x - k)[..., None]
    return (1 - w) * values[k] + w * values[k + 1]


def _picard(step, x0, tol, max_iter):
    x = x0
    diffs = []
    for it in range(1, max_iter + 1):
        nxt = step(x)
        d = float(np.max(np.abs(nxt - x)))
        diffs.append(d)
        x = nxt
        if not np.all(np.isfinite(x)):
            raise ContractionFailed("Picard iterates diverged")
        if d <= tol:
            return x, diffs
    raise ContractionFailed(f"no convergence in {max_iter} steps (last change {diffs[-1]:.2e})")


def _kappa(diffs):
    r = [diffs[k + 1] / diffs[k] for k in range(len(diffs) - 1) if diffs[k] > 0]
    return max(r) if r else 0.0


# ---------------------------------------------------------------- Theta / Omega

@dataclass
class ThetaSolution:
    """Theta(lam) = D(0,1)' - Gamma lam^beta int_0^1 D N(Theta(lam(1-y))) dy^beta.

    Nodes are uniform in sigma = lam^beta (Theta is smooth in lam^beta, not in lam).
    """

    sigma: np.ndarray
    values: np.ndarray
    Lam: float
    kappa: float
    Lam_contraction: float
    residual: float
    diffs: list
    D: np.ndarray
    gamma: float
    beta: float
    qform: QuadraticForm
    y: np.ndarray
    w: np.ndarray

    @property
    def lam(self) -> np.ndarray:
        return self.sigma ** (1.0 / self.beta)

    def theta(self, lam) -> np.ndarray:
        """Nystrom evaluation: one application of the map at the exact point."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if np.any(lam < 0) or np.any(lam > self.Lam * (1 + 1e-12)):
            raise OutsideDomain(f"lambda outside [0, {self.Lam}]")
        sig = (lam[:, None] * (1.0 - self.y[None, :])) ** self.beta
        inner = _interp(self.sigma, self.values, sig)  # (m, q, 2)
        g = self.qform(inner) @ self.D.T
        integral = np.einsum("q,mqi->mi", self.w, g)
        out = self.D[:, 1][None, :] - self.gamma * (lam ** self.beta)[:, None] * integral
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["lambda", "theta1", "theta2", "omega_arg", "omega1", "omega2"])
            for lam, th in zip(self.lam, self.values):
                om_arg = lam ** self.beta
                wr.writerow([repr(float(lam)), repr(float(th[0])), repr(float(th[1])),
                             repr(float(om_arg)), repr(float(om_arg * th[0])),
                             repr(float(om_arg * th[1]))])


def _theta_system(c: DerivedConstants, qform, Lam, n_grid, n_quad):
    beta = c.beta
    z = (np.arange(n_quad) + 0.5) / n_quad  # z = y^beta, dz = dy^beta
    y = z ** (1.0 / beta)
    w = np.full(n_quad, 1.0 / n_quad)
    sigma = np.linspace(0.0, Lam ** beta, n_grid)
    pts = sigma[:, None] * (1.0 - y[None, :]) ** beta
    A = _interp_matrix(sigma, pts, np.broadcast_to(w, pts.shape))
    D = c.D
    top = np.broadcast_to(D[:, 1], (n_grid, 2))
    scale = (c.gamma_beta * sigma)[:, None]

    def step(th):
        return top - scale * (A @ (qform(th) @ D.T))

    return sigma, y, w, step


def theta_first_iterate(c: DerivedConstants, qform=None, lam=None, n_grid=N_GRID, n_quad=N_QUAD):
    """Theta^(1) on the grid, starting from Theta^(0) = D(0,1)'."""
    qform = qform or QuadraticForm.from_constants(c)
    Lam = 1.0 if lam is None else float(np.max(lam))
    sigma, _, _, step = _theta_system(c, qform, Lam, n_grid, n_quad)
    th1 = step(np.broadcast_to(c.D[:, 1], (n_grid, 2)).copy())
    return sigma ** (1.0 / c.beta), th1


def select_contraction_domain(step_factory, start=1.0, kappa_max=KAPPA_MAX, floor=LAMBDA_FLOOR):
    """Halve the domain until three Picard steps show ratio <= kappa_max."""
    Lam = start
    while Lam >= floor:
        step, x0 = step_factory(Lam)
        x = x0
        diffs = []
        for _ in range(3):
            nxt = step(x)
            diffs.append(float(np.max(np.abs(nxt - x))))
            x = nxt
        kappa = _kappa(diffs)
        if np.all(np.isfinite(x)) and kappa <= kappa_max:
            return Lam, kappa
        Lam /= 2
    raise ContractionFailed(f"measured kappa > {kappa_max} down to domain {floor}")


def solve_theta(c: DerivedConstants, qform: Optional[QuadraticForm] = None, Lam: float = 1.0,
                n_grid: int = N_GRID, tol: float = 1e-12, n_quad: int = N_QUAD,
                max_iter: int = 2000, extend_to: Optional[float] = None,
                start="D") -> ThetaSolution:
    """Picard solve of the Theta equation.

    The domain is first shrunk from Lam until the measured contraction factor is
    at most 0.8; if extend_to exceeds it, iteration continues on [0, extend_to]
    seeded from the small-domain solution and is accepted only if the residual
    stays below 1e-6. start="zero" begins from Theta = 0 instead of D(0,1)';
    an array of node values is used as given.
    """
    qform = qform or QuadraticForm.from_constants(c)

    def factory(L):
        _, _, _, step = _theta_system(c, qform, L, n_grid, n_quad)
        return step, np.broadcast_to(c.D[:, 1], (n_grid, 2)).copy()

    Lc, kappa = select_contraction_domain(factory, Lam)
    sigma, y, w, step = _theta_system(c, qform, Lc, n_grid, n_quad)
    if isinstance(start, np.ndarray):
        x0 = np.array(start, dtype=float).reshape(n_grid, 2)
    elif start == "zero":
        x0 = np.zeros((n_grid, 2))
    else:
        x0 = np.broadcast_to(c.D[:, 1], (n_grid, 2)).copy()
    th, diffs = _picard(step, x0, tol, max_iter)
    target = Lc
    if extend_to is not None and extend_to > Lc:
        target = float(extend_to)
        sig_big, y, w, step = _theta_system(c, qform, target, n_grid, n_quad)
        seed = _interp(sigma, th, np.minimum(sig_big, sigma[-1]))
        th, more = _picard(step, seed, tol, max_iter)
        diffs = diffs + more
        sigma = sig_big
    residual = float(np.max(np.abs(step(th) - th)))
    if target > Lc and residual > EXTENSION_RESIDUAL:
        raise ContractionFailed(f"extension residual {residual:.2e} above {EXTENSION_RESIDUAL}")
    return ThetaSolution(sigma=sigma, values=th, Lam=target, kappa=kappa, Lam_contraction=Lc,
                         residual=residual, diffs=diffs, D=c.D.copy(), gamma=c.gamma_beta,
                         beta=c.beta, qform=qform, y=y, w=w)


def omega(sol: ThetaSolution, lam) -> np.ndarray:
    """Omega(lam) = lam Theta(lam^(1/beta)); shape (2,) for scalar lam, else (m, 2)."""
    arr = np.asarray(lam, dtype=float)
    x = np.atleast_1d(arr)
    if np.any(x < 0):
        raise OutsideDomain("lambda must be nonnegative")
    arg = x ** (1.0 / sol.beta)
    if np.any(arg > sol.Lam * (1 + 1e-12)):
        raise OutsideDomain(f"lambda^(1/beta) exceeds solved domain {sol.Lam}")
    out = x[:, None] * sol.theta(arg)
    return out[0] if arr.ndim == 0 else out


def omega_residual(sol: ThetaSolution, lam: float) -> float:
    """Sup-norm residual of the Omega equation at lam, with the solver's quadrature."""
    z = (np.arange(len(sol.y)) + 0.5) / len(sol.y)  # z = w^beta
    wpt = z ** (1.0 / sol.beta)
    inner = omega(sol, lam * (1.0 - wpt) ** sol.beta)
    g = sol.qform(inner) @ sol.D.T / ((1.0 - wpt) ** (2 * sol.beta))[:, None]
    rhs = sol.D @ np.array([0.0, lam]) - sol.gamma * (g.mean(axis=0))
    return float(np.max(np.abs(omega(sol, lam) - rhs)))


# ---------------------------------------------------------------- H

@dataclass
class HSolution:
    """H(theta, lam) on a grid uniform in sigma = theta^gamma, one column per lam."""

    sigma: np.ndarray
    lam: np.ndarray
    values: np.ndarray  # (n_theta, n_lam, 2)
    Lam: float
    kappa: float
    Lam_contraction: float
    residual: float
    diffs: list
    C_beta: np.ndarray
    gexp: float
    system: object = field(repr=False, default=None)

    @property
    def theta(self) -> np.ndarray:
        return self.sigma ** (1.0 / self.gexp)

    def column(self, lam: float) -> np.ndarray:
        """Node values for an arbitrary lam (solved on demand; columns are independent)."""
        hit = np.nonzero(np.isclose(self.lam, lam, rtol=0, atol=1e-14))[0]
        if len(hit):
            return self.values[:, hit[0]]
        step = self.system.step
        lam_col = np.array([float(lam)])
        x0 = self.system.bound(lam_col)
        val, _ = _picard(step(lam_col), x0, 1e-13, 5000)
        return val[:, 0]

    def H(self, theta: float, lam: float) -> np.ndarray:
        if theta < 0 or theta > self.Lam * (1 + 1e-12):
            raise OutsideDomain(f"theta outside [0, {self.Lam}]")
        if lam < 0:
            raise OutsideDomain("lam must be nonnegative")
        col = self.column(lam)
        return self.system.nystrom(col, float(theta), float(lam))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["theta", "lambda", "H1", "H2"])
            for a, th in enumerate(self.theta):
                for c, lm in enumerate(self.lam):
                    h = self.values[a, c]
                    wr.writerow([repr(float(th)), repr(float(lm)), repr(float(h[0])),
                                 repr(float(h[1]))])


class _HSystem:
    def __init__(self, c: DerivedConstants, qform, Lam, n_theta, n_quad):
        beta = c.beta
        self.beta = beta
        self.a = 2 * beta - 1
        self.gexp = self.a if beta == 1.0 else min(1 - beta, self.a)
        self.D = c.D
        self.C = c.C_beta
        self.gamma = c.gamma_beta
        self.qform = qform
        # half 1: y in [0, 1/2], z = y^beta
        zmax = 0.5 ** beta
        z = (np.arange(n_quad) + 0.5) / n_quad * zmax
        y1 = z ** (1 / beta)
        w1 = np.full(n_quad, zmax / n_quad) / (1 - y1) ** (2 - 2 * beta)
        # half 2: y in [1/2, 1], w = (1-y)^(2beta-1)
        wmax = 0.5 ** self.a
        ww = (np.arange(n_quad) + 0.5) / n_quad * wmax
        one_minus_y2 = ww ** (1 / self.a)
        y2 = 1 - one_minus_y2
        w2 = np.full(n_quad, wmax / n_quad) * beta * y2 ** (beta - 1) / self.a
        self.shrink = np.concatenate([1 - y1, one_minus_y2])  # theta -> theta (1-y)
        self.qw = np.concatenate([w1, w2])
        self.sigma = np.linspace(0.0, Lam ** self.gexp, n_theta)
        self.theta = self.sigma ** (1 / self.gexp)
        pts = (self.theta[:, None] * self.shrink[None, :]) ** self.gexp
        self.A = _interp_matrix(self.sigma, pts, np.broadcast_to(self.qw, pts.shape))
        self.pw = self.gamma * self.theta ** self.a

    def bound(self, lam):
        """C_beta (1, lam theta^(1-beta))' on the grid, shape (n_theta, n_lam, 2)."""
        second = lam[None, :] * self.theta[:, None] ** (1 - self.beta)
        return self.C[:, 0][None, None, :] + second[..., None] * self.C[:, 1][None, None, :]

    def step(self, lam):
        top = self.bound(lam)
        D = self.D

        def apply(H):
            g = self.qform(H) @ D.T  # (n_theta, n_lam, 2)
            n, m, _ = g.shape
            integ = (self.A @ g.reshape(n, m * 2)).reshape(n, m, 2)
            return top - self.pw[:, None, None] * integ

        return apply

    def nystrom(self, col, theta, lam):
        pts = (theta * self.shrink) ** self.gexp
        inner = _interp(self.sigma, col, pts)
        g = self.qform(inner) @ self.D.T
        top = self.C[:, 0] + lam * theta ** (1 - self.beta) * self.C[:, 1]
        return top - self.gamma * theta ** self.a * (self.qw @ g)


def solve_H(c: DerivedConstants, qform: Optional[QuadraticForm] = None, Lam: float = 1.0,
            grid_sizes=(256, 17), tol: float = 1e-12, n_quad: int = N_QUAD,
            max_iter: int = 2000, extend_to: Optional[float] = None,
            start="bound") -> HSolution:
    """Picard solve of the H system for beta in (1/2, 1] on [0, Lam] x [0, 1]."""
    if not 0.5 < c.beta <= 1.0:
        raise BetaOutOfRange(f"H system needs beta in (1/2, 1], got {c.beta}")
    qform = qform or QuadraticForm.from_constants(c)
    n_theta, n_lam = grid_sizes
    lam = np.linspace(0.0, 1.0, n_lam)

    def factory(L):
        sysm = _HSystem(c, qform, L, n_theta, n_quad)
        return sysm.step(lam), sysm.bound(lam)

    Lc, kappa = select_contraction_domain(factory, Lam)
    sysm = _HSystem(c, qform, Lc, n_theta, n_quad)
    if isinstance(start, np.ndarray):
        x0 = np.array(start, dtype=float).reshape(n_theta, n_lam, 2)
    elif start == "zero":
        x0 = np.zeros((n_theta, n_lam, 2))
    else:
        x0 = sysm.bound(lam)
    H, diffs = _picard(sysm.step(lam), x0, tol, max_iter)
    target = Lc
    if extend_to is not None and extend_to > Lc:
        target = float(extend_to)
        big = _HSystem(c, qform, target, n_theta, n_quad)
        seed = _interp(sysm.sigma, H, np.minimum(big.theta ** sysm.gexp, sysm.sigma[-1]))
        H, more = _picard(big.step(lam), seed, tol, max_iter)
        diffs = diffs + more
        sysm = big
    residual = float(np.max(np.abs(sysm.step(lam)(H) - H)))
    if target > Lc and residual > EXTENSION_RESIDUAL:
        raise ContractionFailed(f"extension residual {residual:.2e} above {EXTENSION_RESIDUAL}")
    return HSolution(sigma=sysm.sigma, lam=lam, values=H, Lam=target, kappa=kappa,
                     Lam_contraction=Lc, residual=residual, diffs=diffs, C_beta=sysm.C,
                     gexp=sysm.gexp, system=sysm)


# ---------------------------------------------------------------- O(s)

@dataclass
class OValue:
    value: np.ndarray
    error: np.ndarray
    horizon: float
    tail: np.ndarray


def _inv_mu2_sq_tail(c: DerivedConstants, T: float) -> float:
    # quad only warns on a divergent integral; treat that as divergence
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(lambda w: 1.0 / float(c.mu2(w)) ** 2, T, np.inf, limit=200)
        except integrate.IntegrationWarning as exc:
            raise TailNotConverged(f"integral of 1/mu2^2 beyond {T:g} does not settle") from exc
    return val


def _o_integral(c, model, Qcurve, times, T):
    k = np.searchsorted(times, T, side="right")
    t, q = times[:k], Qcurve[:k]
    ph = phi(model, q)
    body = integrate.trapezoid(ph, t, axis=0)
    last = t >= T / 10
    mu = np.asarray(c.mu2(t[last]), dtype=float)
    C = np.max(np.abs(ph[last]) * mu[:, None] ** 2, axis=0)
    tail_int = _inv_mu2_sq_tail(c, T)
    if not np.isfinite(tail_int):
        raise TailNotConverged("integral of 1/mu2^2 diverges")
    tail = C * tail_int
    scale = c.beta * c.gamma_beta
    return scale * c.D @ (body + tail), scale * c.D @ tail


def o_functional(model: BranchingModel, c: DerivedConstants, grid, s: float,
                 tail_horizon: Optional[float] = None, rel_tol: float = 0.01,
                 abs_floor: float = 1e-6) -> OValue:
    """O(s) = beta Gamma D int_0^inf Phi(Q(w; s, 1)) dw for beta <= 1/2.

    The integral runs to the grid horizon T; beyond it Phi is bounded by
    C / mu2(w)^2 with C fitted over the last decade, and that tail integral is
    both added and reported as the error. The value at tail_horizon (default
    T/2) must agree within rel_tol.
    """
    from .volterra import solve_generating_system  # local: volterra is the heavier import

    if not 0.0 < c.beta <= 0.5:
        raise BetaOutOfRange(f"O(s) needs beta in (0, 1/2], got {c.beta}")
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    T = grid.horizon
    half = tail_horizon if tail_horizon is not None else T / 2
    sol = solve_generating_system(model, (s, 1.0), grid)
    times = grid.times
    full, err = _o_integral(c, model, sol.Q.values, times, T)
    short, _ = _o_integral(c, model, sol.Q.values, times, half)
    gap = np.abs(full - short)
    allowed = np.maximum(rel_tol * np.abs(full), abs_floor)
    if np.any(gap > allowed):
        raise TailNotConverged(f"horizon doubling moved O({s}) by {gap.max():.3e}")
    return OValue(value=full, error=err, horizon=T, tail=err)


# ---------------------------------------------------------------- predictions

THEOREMS = ("T1", "C1", "T2", "T3", "T4", "T5", "T6", "Z12")


def predict_limit(theorem: str, c: DerivedConstants, *, lam1: float = 0.0, lam2: float = 0.0,
                  lam: float = 0.0, s: float = 1.0, r: float = 1.0, o_value=None,
                  theta: Optional[ThetaSolution] = None, h: Optional[HSolution] = None) -> float:
    """Limiting Laplace transform / pgf of the named theorem.

    Arguments per theorem: T1 (lam1, lam2); C1, T3 (lam); T2 (s, lam, r, o_value);
    T4 (lam, r, theta); T5 (lam1, lam2, r, h); T6 (lam, r); Z12 (s as s2, r).
    """
    bg = c.beta * c.gamma_beta
    D = c.D
    if theorem == "T1":
        return math.exp(-c.mu1 * bg * D[1, 0] * lam1 - D[1, 1] * lam2)
    if theorem in ("C1", "T3"):
        return math.exp(-D[1, 1] * lam)
    if theorem == "T2":
        if o_value is None:
            raise MissingSolution("T2 needs O(s)")
        o2 = float(np.asarray(getattr(o_value, "value", o_value))[1])
        return math.exp(-r * bg * c.mu1 * D[1, 0] * (1 - s) + r * o2 - D[1, 1] * lam)
    if theorem == "T4":
        if lam == 0:
            return 1.0
        if theta is None:
            raise MissingSolution("T4 needs a Theta solution")
        return math.exp(-r * float(omega(theta, lam)[1]))
    if theorem == "T5":
        if lam1 == 0 and lam2 == 0:
            return 1.0
        if h is None:
            raise MissingSolution("T5 needs an H solution")
        if lam1 == 0:
            raise OutsideDomain("T5 needs lam1 > 0")
        a = 2 * c.beta - 1
        H2 = h.H(lam1 ** (1 / a), lam2 * lam1 ** (-c.beta / a))[1]
        return math.exp(-r * lam1 * float(H2))
    if theorem == "T6":
        return math.exp(-r * c.u[1] * math.sqrt(lam))
    if theorem == "Z12":
        return math.exp(-r * c.u[1] * math.sqrt(1.0 - s))
    raise ValueError(f"unknown theorem {theorem!r}")
