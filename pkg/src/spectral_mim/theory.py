"""Asymptotic eigenvalue and overlap predictions for the spectral matrix.

Notation: for a preprocessed law (s, z) and aspect ratio delta,

    psi(l)   = l * (1/delta + E[z / (l - z)])
    lbar     = argmin psi over (tau, inf)
    zeta(a)  = psi(max(lbar, a))
    R(a)     = E[a z s s^T / (a - z)]

Outliers sit at zeta(alpha_i) for the roots alpha_i > lbar of
zeta(alpha) = lambda_i(R(alpha)).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import BracketError, DomainError, EigenspaceInvarianceViolation, SolverFailure
from .expectation import ZLaw, build_zlaw, expect_scalar, expect_second_moment
from .model_core import LinkModel, Preprocessing, SignalSpec

log = logging.getLogger(__name__)

ROOT_XTOL = 1e-15


def default_margin(tau: float) -> float:
    return 1e-7 * max(1.0, abs(tau))


def tie_tolerance(alpha: float) -> float:
    return 1e-7 * (1.0 + abs(alpha))


@dataclass(frozen=True, eq=False)
class BulkFunctions:
    zlaw: ZLaw
    delta: float
    lambda_bar: float
    bulk_edge: float
    margin: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def tau(self) -> float:
        return self.zlaw.tau


def _check_domain(zlaw: ZLaw, lam: float, margin: float) -> None:
    if not lam > zlaw.tau + 0.5 * margin:
        raise DomainError(f"argument {lam} must exceed tau={zlaw.tau}")


def _psi(zlaw: ZLaw, delta: float, lam: float) -> float:
    return lam * (1.0 / delta + expect_scalar(zlaw, lambda z: z / (lam - z)))


def _psi_prime(zlaw: ZLaw, delta: float, lam: float) -> float:
    return 1.0 / delta - expect_scalar(zlaw, lambda z: z * z / (lam - z) ** 2)


def psi(bulk: BulkFunctions, lam: float) -> float:
    _check_domain(bulk.zlaw, lam, bulk.margin)
    return _psi(bulk.zlaw, bulk.delta, lam)


def psi_prime(bulk: BulkFunctions, lam: float) -> float:
    _check_domain(bulk.zlaw, lam, bulk.margin)
    return _psi_prime(bulk.zlaw, bulk.delta, lam)


def fit_bulk(zlaw: ZLaw, delta: float, margin: float | None = None) -> BulkFunctions:
    """Locate the minimizer of psi and the bulk edge psi(lbar)."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    tau = zlaw.tau
    margin = default_margin(tau) if margin is None else margin
    lo = tau + margin
    dpsi = lambda lam: _psi_prime(zlaw, delta, lam)
    diag = {"boundary_minimizer": False, "quad_tolerance": zlaw.tolerance}
    if dpsi(lo) >= 0:
        lam_bar = lo
        diag["boundary_minimizer"] = True
        log.info("psi has no interior minimizer at delta=%g; clamping at tau + margin", delta)
    else:
        step = max(1.0, abs(tau))
        hi = lo + step
        while dpsi(hi) < 0:
            step *= 2.0
            hi = lo + step
            if step > 1e12:
                raise SolverFailure("could not bracket the minimizer of psi")
        lam_bar = optimize.brentq(dpsi, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)
        diag["psi_prime_residual"] = abs(dpsi(lam_bar))
    edge = _psi(zlaw, delta, lam_bar)
    return BulkFunctions(zlaw=zlaw, delta=float(delta), lambda_bar=float(lam_bar), bulk_edge=float(edge),
                         margin=margin, diagnostics=diag)


def zeta(bulk: BulkFunctions, alpha: float) -> float:
    _check_domain(bulk.zlaw, alpha, bulk.margin)
    if alpha <= bulk.lambda_bar:
        return bulk.bulk_edge
    return _psi(bulk.zlaw, bulk.delta, alpha)


def zeta_prime(bulk: BulkFunctions, alpha: float) -> float:
    _check_domain(bulk.zlaw, alpha, bulk.margin)
    if alpha <= bulk.lambda_bar:
        return 0.0
    return _psi_prime(bulk.zlaw, bulk.delta, alpha)


def r_infinity(zlaw: ZLaw, alpha: float) -> np.ndarray:
    _check_domain(zlaw, alpha, default_margin(zlaw.tau))
    return expect_second_moment(zlaw, lambda z: alpha * z / (alpha - z))


def r_infinity_deriv(zlaw: ZLaw, alpha: float) -> np.ndarray:
    _check_domain(zlaw, alpha, default_margin(zlaw.tau))
    return -expect_second_moment(zlaw, lambda z: z * z / (alpha - z) ** 2)


# ---------------------------------------------------------------- master equation


@dataclass(frozen=True)
class Branch:
    index: int
    alpha: float | None
    is_outlier: bool


@dataclass(frozen=True, eq=False)
class MasterSolution:
    branches: list[Branch]
    bulk: BulkFunctions

    @property
    def j(self) -> int:
        return sum(b.alpha is not None for b in self.branches)

    @property
    def alphas(self) -> list[float]:
        return [b.alpha for b in self.branches if b.alpha is not None]

    @property
    def n_outliers(self) -> int:
        return sum(b.is_outlier for b in self.branches)


def _branch_gap(bulk: BulkFunctions, i: int, alpha: float) -> float:
    ev = np.linalg.eigvalsh(r_infinity(bulk.zlaw, alpha))[::-1]
    return zeta(bulk, alpha) - ev[i]


def solve_master(bulk: BulkFunctions, alpha_max: float | None = None) -> MasterSolution:
    """Solve zeta(alpha) = lambda_i(R(alpha)) branch by branch.

    Each g_i is strictly increasing, so a root exists iff g_i < 0 just right of
    tau, and is then found by bracketed root finding.
    """
    zlaw = bulk.zlaw
    tau = zlaw.tau
    p = zlaw.p
    lo = tau + bulk.margin
    alpha_max = 1e6 * max(1.0, tau) if alpha_max is None else alpha_max
    branches = []
    for i in range(p):
        g = lambda a: _branch_gap(bulk, i, a)
        if g(lo) >= 0:
            branches.append(Branch(i, None, False))
            continue
        step = max(1.0, abs(tau))
        hi = lo + step
        while g(hi) < 0:
            step *= 2.0
            hi = lo + step
            if hi > alpha_max:
                raise SolverFailure(f"branch {i}: bracket expansion exceeded alpha_max={alpha_max}")
        alpha = optimize.brentq(g, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)
        outlier = alpha > bulk.lambda_bar + tie_tolerance(bulk.lambda_bar)
        branches.append(Branch(i, float(alpha), bool(outlier)))
    return MasterSolution(branches=branches, bulk=bulk)


# ---------------------------------------------------------------- predictions


@dataclass(frozen=True, eq=False)
class TheoryPrediction:
    delta: float
    eigenvalues: np.ndarray
    alphas: list
    is_outlier: list
    overlap_basis: np.ndarray
    overlap_signal: np.ndarray
    multiplicity_blocks: list
    diagnostics: dict
    subspace_score: float = 0.0

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "alphas": self.alphas,
            "is_outlier": self.is_outlier,
            "eigenvalues": self.eigenvalues.tolist(),
            "overlap_basis": self.overlap_basis.tolist(),
            "overlap_signal": self.overlap_signal.tolist(),
            "multiplicity_blocks": self.multiplicity_blocks,
            "subspace_score": self.subspace_score,
            "diagnostics": self.diagnostics,
        }


def _blocks(sol: MasterSolution) -> list[list[int]]:
    blocks: list[list[int]] = []
    for b in sol.branches:
        if not b.is_outlier:
            continue
        if blocks:
            prev = sol.branches[blocks[-1][0]].alpha
            if abs(b.alpha - prev) < tie_tolerance(prev):
                blocks[-1].append(b.index)
                continue
        blocks.append([b.index])
    return blocks


def predict(bulk: BulkFunctions, signals: SignalSpec, sol: MasterSolution | None = None,
            invariance_rtol: float = 1e-6) -> TheoryPrediction:
    """Predicted eigenvalue limits and squared overlaps.

    For an outlier block at alpha with eigenspace basis H of R(alpha):

        sum_block |<v_i, e_l>|^2 -> zeta'(alpha) |H^T e_l|^2 / (zeta'(alpha) - h^T R'(alpha) h)

    where R' = dR/dalpha is negative definite.  ``overlap_signal`` uses the
    unit columns of W_tilde in place of e_l.
    """
    sol = solve_master(bulk) if sol is None else sol
    zlaw = bulk.zlaw
    p = zlaw.p
    eig = np.full(p, bulk.bulk_edge)
    for b in sol.branches:
        if b.alpha is not None:
            eig[b.index] = zeta(bulk, b.alpha)
    ob = np.zeros((p, p))
    osig = np.zeros((p, p))
    Wt = signals.W_tilde
    blocks = _blocks(sol)
    denominators = []
    limit_proj = np.zeros((p, p))
    for block in blocks:
        alpha = sol.branches[block[0]].alpha
        R = r_infinity(zlaw, alpha)
        dR = r_infinity_deriv(zlaw, alpha)
        vals, vecs = np.linalg.eigh(R)
        order = np.argsort(vals)[::-1]
        H = vecs[:, order[block]]
        restricted = H.T @ dR @ H
        quad = np.linalg.eigvalsh(restricted)
        spread = quad.max() - quad.min()
        offdiag = np.abs(restricted - np.diag(np.diag(restricted))).max() if len(block) > 1 else 0.0
        if max(spread, offdiag) > invariance_rtol * max(1.0, np.abs(quad).max()):
            raise EigenspaceInvarianceViolation(
                f"h^T dR h varies by {spread:.3g} across the block {block} at alpha={alpha}")
        zp = zeta_prime(bulk, alpha)
        den = zp - float(quad.mean())
        denominators.append(den)
        proj = H @ H.T
        limit_proj += zp / den * proj
        basis_vals = zp * np.sum(H * H, axis=1) / den
        signal_vals = zp * np.einsum("ij,ik,kj->j", Wt, proj, Wt) / den
        for i in block:
            ob[i] = basis_vals
            osig[i] = signal_vals
    diag = dict(bulk.diagnostics)
    diag.update({"lambda_bar": bulk.lambda_bar, "bulk_edge": bulk.bulk_edge, "root_xtol": ROOT_XTOL,
                 "denominators": denominators, "quadrature": zlaw.kind})
    return TheoryPrediction(
        delta=bulk.delta,
        eigenvalues=eig,
        alphas=[b.alpha for b in sol.branches],
        is_outlier=[b.is_outlier for b in sol.branches],
        overlap_basis=ob,
        overlap_signal=osig,
        multiplicity_blocks=blocks,
        diagnostics=diag,
        subspace_score=_limit_subspace_score(limit_proj, signals),
    )


def _limit_subspace_score(proj: np.ndarray, signals: SignalSpec) -> float:
    # max_v |V^T W v| / |W v| with V V^T replaced by its limit in the signal coordinates
    Wt = signals.W_tilde
    mu = linalg.eigh(Wt.T @ proj @ Wt, signals.Sigma, eigvals_only=True)
    return float(np.sqrt(max(mu[-1], 0.0)))


def predict_at(zlaw: ZLaw, signals: SignalSpec, delta: float) -> TheoryPrediction:
    return predict(fit_bulk(zlaw, delta), signals)


# ---------------------------------------------------------------- diagnostics


def check_exactly_p(zlaw: ZLaw, ks=range(2, 9)) -> dict:
    """Advisory check of the divergence condition that guarantees p roots.

    Evaluates inf_{|x|=1} x^T R(alpha) x = lambda_min(R(alpha)) along
    alpha = tau (1 + 10^-k) and classifies the sequence.
    """
    tau = zlaw.tau
    scale = abs(tau) if tau != 0 else 1.0
    alphas = [tau + scale * 10.0 ** (-k) for k in ks]
    values = [float(np.linalg.eigvalsh(expect_second_moment(zlaw, lambda z, a=a: a * z / (a - z)))[0])
              for a in alphas]
    inc = np.diff(values)
    monotone = bool(np.all(inc >= -1e-12 * (1 + np.abs(values[:-1]))))
    if not monotone:
        verdict = "noisy"
    elif len(inc) >= 2 and inc[-1] > 0.5 * inc[-2] and inc[-1] > 1e-9 * (1 + abs(values[-1])):
        # increments not shrinking: logarithmic or faster growth
        verdict = "diverging"
    else:
        verdict = "bounded"
    return {"alphas": alphas, "values": values, "monotone": monotone, "verdict": verdict}


def recovery_threshold(model: LinkModel, signals: SignalSpec, preproc: Preprocessing, branch: int,
                       delta_range: tuple[float, float], zlaw: ZLaw | None = None, rtol: float = 1e-6) -> float:
    """Critical delta at which branch ``branch`` (0-based) becomes an outlier."""
    zlaw = build_zlaw(model, signals, preproc) if zlaw is None else zlaw

    def is_outlier(delta):
        sol = solve_master(fit_bulk(zlaw, delta))
        return sol.branches[branch].is_outlier

    lo, hi = float(delta_range[0]), float(delta_range[1])
    f_lo, f_hi = is_outlier(lo), is_outlier(hi)
    if f_lo == f_hi:
        raise BracketError(f"branch {branch} outlier status is {f_lo} at both ends of {delta_range}")
    if f_lo:
        raise BracketError("outlier status must switch on with increasing delta")
    while hi / lo - 1 > rtol:
        mid = np.sqrt(lo * hi)
        if is_outlier(mid):
            hi = mid
        else:
            lo = mid
    return float(np.sqrt(lo * hi))
