"""Deterministic expectations over the joint law of (s, eps, y, z).

Three discretizations are available:

* tensor Gauss-Hermite over s (noise atoms enumerated exactly),
* plain Monte Carlo over (s, eps),
* a y-resolved law: Gauss-Legendre in y on a graded mesh, each node carrying
  the exact conditional second moment E[s s^T | y].  This is exact for every
  integrand of the form g(z) * (polynomial of degree <= 2 in s), which covers
  all resolvent-type expectations used by the theory, and it resolves the
  singular behaviour of densities such as K0(|y|) at y = 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import IntegrationFailure, MissingDensity, NumericalDomainError, UnsupportedCombination
from .model_core import LinkModel, Preprocessing, SignalSpec, Slice, YSupport

log = logging.getLogger(__name__)

_SQRT2PI = np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------- rules


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    kind: str
    dims: int
    nodes_per_dim: int
    points: np.ndarray
    weights: np.ndarray
    seed: int | None = None
    n_samples: int | None = None

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("quadrature weights must sum to one")


def gauss_hermite_rule(dims: int, nodes: int) -> QuadratureRule:
    """Tensor rule for the standard Gaussian in ``dims`` dimensions."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / _SQRT2PI
    w = w / w.sum()
    grids = np.meshgrid(*([x] * dims), indexing="ij")
    wgrids = np.meshgrid(*([w] * dims), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1) if dims else np.zeros((1, 0))
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1) if dims else np.ones(1)
    return QuadratureRule("gauss_hermite_tensor", dims, nodes, pts, wts)


def monte_carlo_rule(dims: int, n_samples: int, seed: int = 0) -> QuadratureRule:
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n_samples, dims))
    return QuadratureRule("monte_carlo", dims, 0, pts, np.full(n_samples, 1.0 / n_samples),
                          seed=seed, n_samples=n_samples)


def default_rule(p: int, nodes: int | None = None) -> QuadratureRule:
    if nodes is not None:
        return gauss_hermite_rule(p, nodes)
    if p <= 2:
        return gauss_hermite_rule(p, 61)
    if p == 3:
        return gauss_hermite_rule(p, 31)
    return monte_carlo_rule(p, 1_000_000)


def _density_rule(p: int) -> QuadratureRule:
    # even node counts keep s = 0 off the grid, which helps step-like densities
    return gauss_hermite_rule(p, {1: 80, 2: 60, 3: 30}.get(p, 12))


# ---------------------------------------------------------------- y mesh


@dataclass(frozen=True)
class YMesh:
    y: np.ndarray
    w: np.ndarray


def _gl(n: int):
    return np.polynomial.legendre.leggauss(n)


def _panel_nodes(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gl(n)
    a, b = edges[:-1, None], edges[1:, None]
    y = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    ww = 0.5 * (b - a) * w[None, :]
    return y.ravel(), ww.ravel()


def _graded_edges(length: float, scale: float, r0: float, ng: int) -> np.ndarray:
    """Distances from a singular point: geometric up to ``scale``, then uniform."""
    near = min(length, scale)
    edges = list(np.geomspace(r0 * scale, near, ng))
    if length > near:
        k = int(np.ceil((length - near) / scale))
        edges += list(np.linspace(near, length, k + 1)[1:])
    return np.array([0.0] + edges)


def y_mesh(support: YSupport, breakpoints=(), nodes_per_panel: int = 20,
           r0: float = 1e-12, graded_panels: int = 16) -> YMesh:
    """Composite Gauss-Legendre mesh over the response support.

    Panels are split at singular points (graded geometrically towards them)
    and at preprocessing breakpoints; unbounded ends are truncated at
    ``support.tail`` beyond the outermost special point.
    """
    if support.is_discrete:
        y = np.array(support.atoms, dtype=float)
        return YMesh(y, np.ones_like(y))
    lo, hi = support.lower, support.upper
    sing = sorted({float(c) for c in support.singular_points if lo <= c <= hi})
    special = sorted({float(b) for b in breakpoints if lo < b < hi} | set(sing))
    anchor_lo = min(special + [0.0 if lo == -np.inf else lo])
    anchor_hi = max(special + [0.0 if hi == np.inf else hi])
    lo_eff = lo if np.isfinite(lo) else anchor_lo - support.tail
    hi_eff = hi if np.isfinite(hi) else anchor_hi + support.tail
    pts = sorted({lo_eff, hi_eff} | set(special))
    ys, ws = [], []
    scale = support.scale
    for a, b in zip(pts[:-1], pts[1:]):
        if b - a <= 0:
            continue
        sa, sb = a in sing, b in sing
        if sa and sb:
            m = 0.5 * (a + b)
            pieces = [(a, m, +1), (m, b, -1)]
        elif sa:
            pieces = [(a, b, +1)]
        elif sb:
            pieces = [(a, b, -1)]
        else:
            pieces = [(a, b, 0)]
        for pa, pb, grade in pieces:
            length = pb - pa
            if grade == 0:
                k = max(1, int(np.ceil(length / scale)))
                edges = np.linspace(pa, pb, k + 1)
            elif grade > 0:
                edges = pa + _graded_edges(length, scale, r0, graded_panels)
            else:
                edges = (pb - _graded_edges(length, scale, r0, graded_panels))[::-1]
            yy, ww = _panel_nodes(np.asarray(edges), nodes_per_panel)
            ys.append(yy)
            ws.append(ww)
    y = np.concatenate(ys)
    w = np.concatenate(ws)
    order = np.argsort(y, kind="stable")
    return YMesh(y[order], w[order])


# ---------------------------------------------------------------- conditional moments

_MOMENT_CACHE: dict = {}


def clear_caches() -> None:
    _MOMENT_CACHE.clear()
    _TABLE_CACHE.clear()


def _sym_from_upper(vec: np.ndarray, p: int) -> np.ndarray:
    M = np.zeros((p, p))
    iu = np.triu_indices(p)
    M[iu] = vec
    return M + np.triu(M, 1).T


def _slice_integrand(slc: Slice, y: float, p: int, u: np.ndarray) -> np.ndarray:
    """Values of phi(r) * inv_jac * (1, upper(s s^T)) summed over roots, per row of u."""
    iu = np.triu_indices(p)
    out = np.zeros((u.shape[0], 1 + len(iu[0])))
    for r, inv in slc.roots(y, u):
        s = r[:, None] * slc.direction[None, :] + u @ slc.complement.T
        wt = np.exp(-0.5 * r * r) / _SQRT2PI * inv
        out[:, 0] += wt
        out[:, 1:] += wt[:, None] * (s[:, iu[0]] * s[:, iu[1]])
    return out


def _exp_trapezoid(h: float = 1.0 / 16, t_lo: float = -46.0, t_hi: float = 4.5):
    # u = +-exp(t): the trapezoid rule in t converges geometrically for integrands
    # analytic in a strip, and resolves the u -> 0 region of product-type links
    t = np.arange(t_lo, t_hi, h)
    u = np.concatenate([-np.exp(t[::-1]), np.exp(t)])
    w = np.abs(u) * h * np.exp(-0.5 * u * u) / _SQRT2PI
    return u[:, None], w


_U_NODES, _U_WEIGHTS = _exp_trapezoid()


def _slice_moments(slc: Slice, y: float, p: int) -> np.ndarray:
    m = p - 1
    if m == 0:
        return _slice_integrand(slc, y, p, np.zeros((1, 0)))[0]
    if m == 1:
        return _U_WEIGHTS @ _slice_integrand(slc, y, p, _U_NODES)
    rule = gauss_hermite_rule(m, 40 if m == 2 else 16)
    return rule.weights @ _slice_integrand(slc, y, p, rule.points)


def _density_moments(model: LinkModel, signals: SignalSpec, y: float) -> np.ndarray:
    p = model.p
    rule = _density_rule(p)
    t = rule.points @ signals.W_tilde
    dens = np.asarray(model.cond_density(y, t), dtype=float)
    if np.any(dens < 0) or not np.all(np.isfinite(dens)):
        raise NumericalDomainError(f"conditional density invalid at y={y}", node=y)
    iu = np.triu_indices(p)
    s = rule.points
    wd = rule.weights * dens
    return np.concatenate([[wd.sum()], wd @ (s[:, iu[0]] * s[:, iu[1]])])


def conditional_moments(model: LinkModel, signals: SignalSpec, y) -> tuple[np.ndarray, np.ndarray]:
    """m0(y) = E_s[p(y|s)] and M(y) = E_s[p(y|s) s s^T] at each requested y."""
    if not model.has_density:
        raise MissingDensity(f"model {model.name} has no conditional density")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    p = model.p
    key0 = (model, signals.key())
    m0 = np.empty(len(y))
    M = np.empty((len(y), p, p))
    slices = model.slicer(signals) if model.slicer is not None else None
    for k, yk in enumerate(y):
        key = key0 + (float(yk),)
        vec = _MOMENT_CACHE.get(key)
        if vec is None:
            if slices is not None:
                vec = sum(prob * _slice_moments(slc, float(yk), p) for prob, slc in slices)
            else:
                vec = _density_moments(model, signals, float(yk))
            _MOMENT_CACHE[key] = vec
        m0[k] = vec[0]
        M[k] = _sym_from_upper(vec[1:], p)
    return m0, M


@dataclass(frozen=True, eq=False)
class MomentTable:
    """Conditional moments on a y-mesh; ``w`` are the mesh weights in y."""

    y: np.ndarray
    w: np.ndarray
    m0: np.ndarray
    M: np.ndarray
    mass: float

    @property
    def p(self) -> int:
        return self.M.shape[1]


_TABLE_CACHE: dict = {}


def moment_table(model: LinkModel, signals: SignalSpec, breakpoints=(), nodes_per_panel: int = 20) -> MomentTable:
    key = (model, signals.key(), tuple(sorted(float(b) for b in breakpoints)), nodes_per_panel)
    tab = _TABLE_CACHE.get(key)
    if tab is not None:
        return tab
    mesh = y_mesh(model.y_support, breakpoints, nodes_per_panel)
    m0, M = conditional_moments(model, signals, mesh.y)
    keep = m0 > 1e-300
    mass = float(mesh.w[keep] @ m0[keep])
    tab = MomentTable(mesh.y[keep], mesh.w[keep], m0[keep], M[keep], mass)
    log.debug("moment table for %s: %d nodes, mass %.15f", model.name, len(tab.y), mass)
    _TABLE_CACHE[key] = tab
    return tab


# ---------------------------------------------------------------- ZLaw


@dataclass(frozen=True, eq=False)
class ZLaw:
    """Weighted atoms (s_i, z_i, weight_i) for the joint law of (s, z).

    ``zc, wc, Cc`` hold the same law grouped by z with the conditional second
    moment of s, which is all that resolvent-type expectations need.
    """

    z: np.ndarray
    s: np.ndarray
    weights: np.ndarray
    tau: float
    kind: str
    zc: np.ndarray
    wc: np.ndarray
    Cc: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("ZLaw weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("ZLaw weights must sum to one")
        if np.max(self.z) > self.tau + 1e-9:
            raise ValueError(f"atom z={np.max(self.z)} exceeds tau={self.tau}")

    @property
    def p(self) -> int:
        return self.s.shape[1]

    @property
    def tolerance(self) -> float:
        return float(self.diagnostics.get("tolerance", 0.0))


def _law_from_points(s: np.ndarray, z: np.ndarray, w: np.ndarray, tau: float, kind: str, diag: dict) -> ZLaw:
    keep = w > 0
    s, z, w = s[keep], z[keep], w[keep]
    w = w / w.sum()
    C = s[:, :, None] * s[:, None, :]
    return ZLaw(z=z, s=s, weights=w, tau=tau, kind=kind, zc=z, wc=w, Cc=C, diagnostics=diag)


def _check_z(z: np.ndarray, preproc: Preprocessing) -> None:
    bad = ~np.isfinite(z)
    if bad.any():
        raise NumericalDomainError(f"preprocessing {preproc.name} returned non-finite values",
                                   node=int(np.flatnonzero(bad)[0]))


def build_zlaw(model: LinkModel, signals: SignalSpec, preproc: Preprocessing,
               rule: QuadratureRule | None = None, nodes_per_panel: int = 20) -> ZLaw:
    """Discretize the joint law of (s, z = T(y)).

    With ``rule=None`` the y-resolved law is used whenever the model exposes
    its conditional density; otherwise the default Gaussian rule for p.
    """
    p = model.p
    if rule is None:
        if model.has_density and p <= 3:
            return build_zlaw_yresolved(model, signals, preproc, nodes_per_panel)
        rule = default_rule(p)
    if rule.dims != p:
        raise UnsupportedCombination(f"rule has dims={rule.dims}, model has p={p}")
    t = rule.points @ signals.W_tilde
    if rule.kind == "gauss_hermite_tensor":
        if not model.noise.is_discrete:
            raise UnsupportedCombination("sampler noise needs a Monte-Carlo rule")
        ss, zs, ws = [], [], []
        for val, prob in model.noise.atoms:
            y = model.link(t, np.full(len(t), val))
            ss.append(rule.points)
            zs.append(preproc(y))
            ws.append(rule.weights * prob)
        s, z, w = np.concatenate(ss), np.concatenate(zs), np.concatenate(ws)
        tol = 0.0
    else:
        rng = np.random.default_rng((rule.seed or 0) + 1)
        eps = model.noise.draw(rng, len(t))
        s, z, w = rule.points, preproc(model.link(t, eps)), rule.weights.copy()
        tol = 1.0 / np.sqrt(len(t))
    _check_z(z, preproc)
    return _law_from_points(s, z, w, preproc.tau, rule.kind,
                            {"tolerance": tol, "nodes_per_dim": rule.nodes_per_dim, "n_atoms": len(z)})


def build_zlaw_yresolved(model: LinkModel, signals: SignalSpec, preproc: Preprocessing,
                         nodes_per_panel: int = 20) -> ZLaw:
    p = model.p
    tab = moment_table(model, signals, preproc.breakpoints, nodes_per_panel)
    z = preproc(tab.y)
    _check_z(z, preproc)
    wy = tab.w * tab.m0
    C = tab.M / tab.m0[:, None, None]
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    # 2p atoms per node, +-sqrt(p * lam_j) v_j, reproduce E[s s^T | y] exactly
    lam, vec = np.linalg.eigh(C)
    lam = np.clip(lam, 0.0, None)
    amp = np.sqrt(p * lam)[:, None, :] * vec  # (K, p, p), column j is atom j
    atoms = np.concatenate([np.swapaxes(amp, 1, 2), -np.swapaxes(amp, 1, 2)], axis=1)  # (K, 2p, p)
    s = atoms.reshape(-1, p)
    za = np.repeat(z, 2 * p)
    wa = np.repeat(wy / (2 * p), 2 * p)
    total = wy.sum()
    keep = wa > 0
    diag = {"tolerance": abs(1.0 - tab.mass) + 1e-10, "mass": tab.mass, "n_y_nodes": len(tab.y),
            "nodes_per_panel": nodes_per_panel}
    return ZLaw(z=za[keep], s=s[keep], weights=wa[keep] / total, tau=preproc.tau, kind="y_resolved",
                zc=z, wc=wy / total, Cc=C, diagnostics=diag)


# ---------------------------------------------------------------- expectations


def expect(zlaw: ZLaw, f: Callable[[np.ndarray, np.ndarray], np.ndarray]):
    """Weighted sum of ``f(s, z)`` over the atoms; ``f`` is vectorized over atoms."""
    vals = np.asarray(f(zlaw.s, zlaw.z), dtype=float)
    if vals.ndim == 0:
        vals = np.full(len(zlaw.z), float(vals))
    if vals.shape[0] != len(zlaw.z):
        raise ValueError("integrand must return one value per atom")
    finite = np.isfinite(vals.reshape(len(zlaw.z), -1)).all(axis=1)
    if not finite.all():
        i = int(np.flatnonzero(~finite)[0])
        raise NumericalDomainError(f"integrand non-finite at atom {i}", node=(zlaw.s[i], zlaw.z[i]))
    out = np.tensordot(zlaw.weights, vals, axes=1)
    if out.ndim == 2 and out.shape[0] == out.shape[1]:
        if np.allclose(vals, np.swapaxes(vals, 1, 2), rtol=0, atol=1e-12 * (1 + np.abs(vals).max())):
            out = 0.5 * (out + out.T)
    return out


def expect_second_moment(zlaw: ZLaw, g: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """E[g(z) s s^T] from the grouped representation."""
    vals = np.asarray(g(zlaw.zc), dtype=float)
    if not np.all(np.isfinite(vals)):
        i = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NumericalDomainError(f"integrand non-finite at z={zlaw.zc[i]}", node=zlaw.zc[i])
    out = np.einsum("k,kij->ij", zlaw.wc * vals, zlaw.Cc)
    return 0.5 * (out + out.T)


def expect_scalar(zlaw: ZLaw, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """E[g(z)] from the grouped representation."""
    vals = np.asarray(g(zlaw.zc), dtype=float)
    if not np.all(np.isfinite(vals)):
        i = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NumericalDomainError(f"integrand non-finite at z={zlaw.zc[i]}", node=zlaw.zc[i])
    return float(zlaw.wc @ vals)


def integrate_y(model: LinkModel, g: Callable[[float], float], tol: float = 1e-8,
                extra_points=(), limit: int = 500) -> float:
    """Integral of g over the response support (sum over atoms if discrete).

    Continuous supports are split at singular points and ``extra_points``;
    each panel is integrated adaptively by Gauss-Kronrod.
    """
    sup = model.y_support
    if sup.is_discrete:
        return float(sum(g(float(a)) for a in sup.atoms))
    pts = sorted({float(c) for c in tuple(sup.singular_points) + tuple(extra_points)
                  if sup.lower < c < sup.upper})
    edges = [sup.lower] + pts + [sup.upper]
    total, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e, info = integrate.quad(lambda y: float(g(y)), a, b, epsabs=tol, epsrel=1e-10,
                                      limit=limit, full_output=1)[:3]
        total += val
        err += e
    if err > max(10 * tol, 1e-10 * abs(total)):
        raise IntegrationFailure(f"integrate_y error estimate {err:.3g} exceeds tolerance", err)
    return total
