"""Optimal weak-recovery threshold and the preprocessing that attains it.

With m0(y) = E_s[p(y|s)] and M(y) = E_s[p(y|s) s s^T], the threshold is

    1/delta_c = max_{|u|=1} int (u^T (M(y) - m0(y) I) u)^2 / m0(y) dy

and the optimal map is T*(y) = 1 - m0(y) / (u_c^T M(y) u_c).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from . import bessel
from .errors import DegenerateObjective, DomainError, MissingDensity, SolverFailure
from .expectation import MomentTable, conditional_moments, integrate_y, moment_table
from .model_core import LinkModel, Preprocessing, SignalSpec

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300
OBJECTIVE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class OptimalDesign:
    delta_c: float
    u_c: np.ndarray
    T_star: Preprocessing
    T_star_delta: Callable[[float], Preprocessing]
    objective_profile: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"delta_c": self.delta_c, "inverse_delta_c": 1.0 / self.delta_c, "u_c": self.u_c.tolist(),
                "tau": self.T_star.tau, "diagnostics": self.diagnostics}


def _require_density(model: LinkModel) -> None:
    if not model.has_density:
        raise MissingDensity(f"model {model.name} has no conditional density")


def _centered(tab: MomentTable) -> np.ndarray:
    return tab.M - tab.m0[:, None, None] * np.eye(tab.p)[None]


def _objective_many(tab: MomentTable, U: np.ndarray) -> np.ndarray:
    """Objective for each row of U (unit vectors) on a moment table."""
    N = _centered(tab)
    quad = np.einsum("ui,kij,uj->uk", U, N, U)
    keep = tab.m0 > DENSITY_FLOOR
    return (quad[:, keep] ** 2 / tab.m0[keep]) @ tab.w[keep]


def objective(model: LinkModel, signals: SignalSpec, u, tab: MomentTable | None = None) -> float:
    """int (E_s[p(y|s)(<s,u>^2 - 1)])^2 / E_s[p(y|s)] dy on the graded y-mesh."""
    _require_density(model)
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1) > 1e-10:
        raise ValueError("u must be a unit vector")
    tab = moment_table(model, signals) if tab is None else tab
    return float(_objective_many(tab, u[None, :])[0])


def objective_adaptive(model: LinkModel, signals: SignalSpec, u, tol: float = 1e-9) -> float:
    """Same integral through adaptive integration over y (independent route)."""
    _require_density(model)
    u = np.asarray(u, dtype=float)

    def g(y):
        m0, M = conditional_moments(model, signals, [y])
        if m0[0] <= DENSITY_FLOOR:
            return 0.0
        return float((u @ M[0] @ u - m0[0]) ** 2 / m0[0])

    return integrate_y(model, g, tol=tol)


def _canonical_sign(u: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(u) > 1e-12)
    return -u if nz.size and u[nz[0]] < 0 else u


def _maximize_p2(tab: MomentTable, grid: int = 180) -> tuple[np.ndarray, float, dict]:
    thetas = np.arange(grid) * np.pi / grid
    U = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    vals = _objective_many(tab, U)
    best = vals.max()
    # first grid point within rounding of the maximum: a deterministic pick on degenerate sets
    j = int(np.flatnonzero(vals >= best * (1 - 1e-9))[0])
    step = np.pi / grid
    lo, hi = thetas[j] - step, thetas[j] + step
    unit = lambda th: np.array([np.cos(th), np.sin(th)])
    # the maximizer is a root of the angular derivative; Brent on it resolves theta to rounding
    slope = lambda th: float(_objective_grad(tab, unit(th))[1] @ np.array([-np.sin(th), np.cos(th)]))
    if slope(lo) > 0 > slope(hi):
        th = optimize.brentq(slope, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    else:
        f = lambda t: -float(_objective_many(tab, unit(t)[None, :])[0])
        th = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}).x
    val = float(_objective_many(tab, unit(th)[None, :])[0])
    if val < vals[j]:
        th, val = thetas[j], float(vals[j])
    return _canonical_sign(unit(th)), val, {"theta": thetas.tolist(), "objective": vals.tolist()}


def _objective_grad(tab: MomentTable, u: np.ndarray) -> tuple[float, np.ndarray]:
    N = _centered(tab)
    keep = tab.m0 > DENSITY_FLOOR
    N, m0, w = N[keep], tab.m0[keep], tab.w[keep]
    Nu = N @ u
    quad = Nu @ u
    c = w * quad / m0
    return float(c @ quad), 4.0 * (c @ Nu)


def _maximize_sphere(tab: MomentTable, starts: list[np.ndarray], iters: int = 500) -> tuple[np.ndarray, float]:
    best_u, best_f = None, -np.inf
    for u in starts:
        u = u / np.linalg.norm(u)
        f, g = _objective_grad(tab, u)
        step = 1.0
        for _ in range(iters):
            g_tan = g - (g @ u) * u
            if np.linalg.norm(g_tan) < 1e-12 * max(1.0, abs(f)):
                break
            while step > 1e-14:
                cand = u + step * g_tan
                cand /= np.linalg.norm(cand)
                fc, gc = _objective_grad(tab, cand)
                if fc > f:
                    u, f, g = cand, fc, gc
                    step *= 2.0
                    break
                step *= 0.5
            else:
                break
        if f > best_f:
            best_u, best_f = u, f
    return _canonical_sign(best_u), best_f


def _tstar_from_moments(m0: np.ndarray, M: np.ndarray, u: np.ndarray) -> np.ndarray:
    mu = np.einsum("i,kij,j->k", u, M, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mu > 0, 1.0 - m0 / mu, -np.inf)


def t_star_delta_map(T: Preprocessing, delta_c: float, delta: float) -> Preprocessing:
    """sqrt(dc) T / (sqrt(d) - (sqrt(d) - sqrt(dc)) T), for delta > delta_c."""
    if delta < delta_c:
        raise DomainError("T*_delta needs delta >= delta_c")
    a, b = np.sqrt(delta_c), np.sqrt(delta)
    if b == a:
        return T

    def f(y):
        t = T(y)
        return a * t / (b - (b - a) * t)

    tau = a * T.tau / (b - (b - a) * T.tau)
    return Preprocessing(name=f"{T.name}_delta({delta:g})", func=f, tau=float(tau), bound=a / (b - a),
                         breakpoints=T.breakpoints, params={"delta": delta, "delta_c": delta_c})


def design(model: LinkModel, signals: SignalSpec, floor: float = -30.0, restarts: int = 50,
           seed: int = 0) -> OptimalDesign:
    """Maximize the threshold objective over the sphere and build T*."""
    _require_density(model)
    tab = moment_table(model, signals)
    p = model.p
    if p == 1:
        u_c = np.array([1.0])
        best = float(_objective_many(tab, u_c[None, :])[0])
        profile = {}
    elif p == 2:
        u_c, best, profile = _maximize_p2(tab)
    else:
        rng = np.random.default_rng(seed)
        starts = list(rng.standard_normal((restarts, p)))
        try:
            warm = troiani_threshold(model, signals, tab=tab).M_star
            starts.append(np.linalg.eigh(warm)[1][:, -1])
        except SolverFailure:
            pass
        u_c, best = _maximize_sphere(tab, starts)
        profile = {}
    if not best > OBJECTIVE_FLOOR:
        raise DegenerateObjective(f"objective maximum {best:.3g} below floor; delta_c is infinite")
    delta_c = 1.0 / best

    def tstar(y):
        y = np.asarray(y, dtype=float)
        m0, M = conditional_moments(model, signals, y.ravel())
        return np.maximum(_tstar_from_moments(m0, M, u_c), floor).reshape(y.shape)

    tvals = np.maximum(_tstar_from_moments(tab.m0, tab.M, u_c), floor)
    tau = float(tvals.max())
    if not model.y_support.is_discrete:
        # T* <= 1 always; if it still increases at a truncated tail its supremum is the limit 1
        order = np.argsort(tab.y)
        ends = []
        if not np.isfinite(model.y_support.upper):
            ends.append(tvals[order][-1] - tvals[order][-2])
        if not np.isfinite(model.y_support.lower):
            ends.append(tvals[order][0] - tvals[order][1])
        if any(e > 0 for e in ends):
            tau = 1.0
    T = Preprocessing(name=f"design_optimal[{model.name}]", func=tstar, tau=tau, bound=max(abs(floor), 1.0),
                      params={"u_c": u_c.tolist()})
    diag = {"objective_max": best, "n_y_nodes": len(tab.y), "mass": tab.mass}
    return OptimalDesign(delta_c=delta_c, u_c=u_c, T_star=T,
                         T_star_delta=lambda d: t_star_delta_map(T, delta_c, d),
                         objective_profile=profile, diagnostics=diag)


# ---------------------------------------------------------------- closed forms


def t_star_product(y) -> np.ndarray:
    """1 - K0(|y|) / (y K0(|y|) + |y| K1(|y|)); y = 0 is outside the domain."""
    y = np.asarray(y, dtype=float)
    if np.any(y == 0):
        raise DomainError("t_star_product is undefined at y = 0")
    a = np.abs(y)
    k0e, k1e = bessel.k0k1e(a)
    return 1.0 - k0e / (y * k0e + a * k1e)


@dataclass(frozen=True)
class MixedPRConstants:
    gamma: float
    a1: float
    a2: float
    a3: float
    b: float
    ell: float
    A: float
    B: float


def mixed_pr_constants(eta: float, rho: float, delta: float) -> MixedPRConstants:
    if not 0 < eta < 1:
        raise DomainError("eta must lie in (0, 1)")
    if abs(rho) >= 1 or rho == 0:
        raise DomainError("rho must satisfy 0 < |rho| < 1")
    if delta <= 0:
        raise DomainError("delta must be positive")
    gamma = 0.5 * (1 + np.sqrt(4 * rho**2 * eta * (1 - eta) + (2 * eta - 1) ** 2))
    kap = (gamma - eta) / (eta * rho)
    a1 = 1 + 2 * (gamma - eta) / eta + kap**2
    a2 = eta + (1 - eta) * rho**2 + 2 * (gamma - eta) / eta + kap**2 * ((1 - eta) + eta * rho**2)
    a3 = (1 - eta) * (1 - rho**2) + kap**2 * eta * (1 - rho**2)
    b = a1 - a3
    target = 1.0 / (gamma**2 * delta)

    def lhs(ell):
        f = lambda y: np.sqrt(2 / np.pi) * np.exp(-0.5 * y * y) * (y * y - 1) ** 2 / (a2 * y * y + ell)
        return (ell - a3) * integrate.quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)[0]

    lo = (gamma / eta) ** 2 - b
    lo_eval = lo + 1e-12 * max(1.0, abs(lo))
    hi = lo + 1.0
    while lhs(hi) < target:
        hi = lo + 2 * (hi - lo)
        if hi - lo > 1e12:
            raise SolverFailure(f"no solution for ell at delta={delta} (LHS stays below {target:.4g})")
    if lhs(lo_eval) >= target:
        raise SolverFailure("equation for ell has no sign change on the admissible interval")
    ell = optimize.brentq(lambda l: lhs(l) - target, lo_eval, hi, xtol=1e-14, rtol=1e-14)
    probe = np.linspace(lo_eval, hi, 9)
    vals = [lhs(x) for x in probe]
    if np.any(np.diff(vals) < -1e-12):
        log.warning("mixed PR: LHS not monotone on the bracket; root may not be unique")
    A = a2 + gamma * (ell - a3)
    B = ell - gamma * (ell - a3)
    return MixedPRConstants(gamma, a1, a2, a3, b, ell, A, B)


def t_star_mixed_pr(eta: float, rho: float, delta: float) -> Preprocessing:
    """Closed-form optimal map for two-component mixed phase retrieval."""
    c = mixed_pr_constants(eta, rho, delta)
    if c.A <= 0 or c.B <= 0:
        raise SolverFailure("mixed PR map has a pole on the real line")
    f = lambda y: (np.asarray(y) ** 2 - 1) / (c.A * np.asarray(y) ** 2 + c.B)
    tau = 1.0 / c.A
    return Preprocessing(name="mixed_pr_optimal", func=f, tau=tau, bound=max(tau, 1.0 / c.B),
                         params={"eta": eta, "rho": rho, "delta": delta, "ell": c.ell, "gamma": c.gamma})


# ---------------------------------------------------------------- comparison operator


@dataclass(frozen=True, eq=False)
class TroianiResult:
    one_over_alpha_c: float
    M_star: np.ndarray
    M_power: np.ndarray
    iterations: int
    rank_one_attained: bool


def _apply_F(E: np.ndarray, wt: np.ndarray, M: np.ndarray) -> np.ndarray:
    out = np.einsum("k,kij,jl,klm->im", wt, E, M, E)
    return 0.5 * (out + out.T)


def troiani_threshold(model: LinkModel, signals: SignalSpec, tol: float = 1e-10, max_iter: int = 10_000,
                      tab: MomentTable | None = None, seed: int = 0) -> TroianiResult:
    """Power iteration on M -> E_y[E(y) M E(y)] with E(y) = E[s s^T | y] - I.

    When the top eigenvalue is degenerate the iterate converges to a mixture
    of fixed points; a rank-one member is then sought along the common
    eigenvectors of the E(y) family.
    """
    _require_density(model)
    tab = moment_table(model, signals) if tab is None else tab
    p = model.p
    keep = tab.m0 > DENSITY_FLOOR
    E = tab.M[keep] / tab.m0[keep, None, None] - np.eye(p)[None]
    wt = tab.w[keep] * tab.m0[keep]
    M = np.eye(p) / np.sqrt(p)
    FM = _apply_F(E, wt, M)
    if np.linalg.norm(FM) < 1e-12:
        return TroianiResult(0.0, np.zeros((p, p)), M, 0, True)
    it = 0
    for it in range(1, max_iter + 1):
        nxt = FM / np.linalg.norm(FM)
        diff = np.linalg.norm(nxt - M)
        M = nxt
        FM = _apply_F(E, wt, M)
        if diff < tol:
            break
    else:
        raise SolverFailure("power iteration did not converge", last_iterate=M)
    rq = float(np.sum(FM * M))
    ev = np.linalg.eigvalsh(M)
    if ev[-2] <= 1e-6 * ev[-1] if p > 1 else True:
        return TroianiResult(rq, M, M, it, True)
    # degenerate top eigenspace: test the common eigenvectors of the E(y)
    rng = np.random.default_rng(seed)
    combo = np.einsum("k,kij->ij", rng.standard_normal(len(wt)) * wt, E)
    _, vecs = np.linalg.eigh(0.5 * (combo + combo.T))
    best, best_val = None, -np.inf
    for v in vecs.T:
        V = np.outer(v, v)
        FV = _apply_F(E, wt, V)
        val = float(np.sum(FV * V))
        resid = np.linalg.norm(FV - val * V)
        if resid < 1e-6 * max(abs(val), 1e-300) and val > best_val:
            best, best_val = V, val
    if best is not None and abs(best_val - rq) <= 1e-8 * abs(rq):
        return TroianiResult(rq, best, M, it, True)
    return TroianiResult(rq, M, M, it, False)
