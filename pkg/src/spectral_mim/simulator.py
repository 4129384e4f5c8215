"""Finite (n, d) experiments for the spectral estimator D = (1/n) A^T diag(z) A."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import DegenerateSignals, InvalidDimension, SolverFailure
from .lanczos import lanczos_top
from .model_core import LinkModel, Preprocessing, SignalSpec

log = logging.getLogger(__name__)

DENSE_FALLBACK_MAX = 4000
CSV_COLUMNS = ("delta", "n", "d", "preproc", "stat_name", "i", "j", "mean", "std", "trials", "seed")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    n: int
    d: int
    model: LinkModel
    signals: SignalSpec
    preproc: Preprocessing
    trials: int = 10
    seed: int = 0
    eigensolver: str = "auto"  # auto | dense | lanczos
    dense_cutoff: int = 800
    lanczos_max_iter: int = 300
    lanczos_tol: float = 1e-10
    random_frame: bool = False
    grid_index: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise InvalidDimension("n and d must be positive")
        if self.d < self.signals.p:
            raise InvalidDimension(f"d={self.d} smaller than p={self.signals.p}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.eigensolver not in ("auto", "dense", "lanczos"):
            raise ValueError(f"unknown eigensolver {self.eigensolver!r}")
        if self.model.p != self.signals.p:
            raise InvalidDimension("model and signals disagree on p")

    @property
    def delta(self) -> float:
        return self.n / self.d

    @property
    def p(self) -> int:
        return self.signals.p


@dataclass(frozen=True, eq=False)
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    overlap_signal: np.ndarray
    overlap_basis: np.ndarray
    subspace_score: float
    W_star: np.ndarray
    basis: np.ndarray
    solver: str = "dense"


def trial_rng(seed: int, grid_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(grid_index, trial)))


def canonicalize_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def subspace_score(V: np.ndarray, W: np.ndarray) -> float:
    """max over v of |V^T W v| / |W v| via the p x p generalized eigenproblem."""
    B = W.T @ W
    if np.linalg.eigvalsh(B)[0] <= 1e-12 * max(1.0, np.trace(B)):
        raise DegenerateSignals("W^T W is singular")
    VW = V.T @ W
    Amat = VW.T @ VW
    mu = linalg.eigh(0.5 * (Amat + Amat.T), 0.5 * (B + B.T), eigvals_only=True)
    return float(np.sqrt(max(mu[-1], 0.0)))


def weak_recovery_stat(result: SpectralResult, signals: SignalSpec | None = None) -> float:
    W = result.W_star
    if signals is not None and np.max(np.abs(W.T @ W - signals.Sigma)) > 1e-10:
        raise DegenerateSignals("result signals do not match the given Gram matrix")
    return subspace_score(result.eigenvectors, W)


def _top_dense(A: np.ndarray, z: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    n, d = A.shape
    D = (A.T * z) @ A / n
    vals, vecs = linalg.eigh(0.5 * (D + D.T), subset_by_index=[d - p, d - 1])
    return vals[::-1], vecs[:, ::-1]


def _top_lanczos(A, z, p, rng, cfg: ExperimentConfig):
    n, d = A.shape
    matvec = lambda x: A.T @ (z * (A @ x)) / n
    return lanczos_top(matvec, d, p, rng, max_iter=cfg.lanczos_max_iter, tol=cfg.lanczos_tol)


def run_trial(cfg: ExperimentConfig, rng: np.random.Generator) -> SpectralResult:
    n, d, p = cfg.n, cfg.d, cfg.p
    W = cfg.signals.realize(d, rng if cfg.random_frame else None)
    A = rng.standard_normal((n, d))
    y = cfg.model.responses(A @ W, rng)
    z = cfg.preproc(y)
    if not np.all(np.isfinite(z)):
        raise SolverFailure("preprocessing produced non-finite values")
    use_dense = cfg.eigensolver == "dense" or (cfg.eigensolver == "auto" and d <= cfg.dense_cutoff)
    solver = "dense"
    if use_dense:
        vals, V = _top_dense(A, z, p)
    else:
        try:
            vals, V = _top_lanczos(A, z, p, rng, cfg)
            solver = "lanczos"
        except SolverFailure:
            if d > DENSE_FALLBACK_MAX:
                raise
            log.warning("Lanczos failed at d=%d; falling back to dense", d)
            vals, V = _top_dense(A, z, p)
    V = canonicalize_signs(V)
    Q, R = np.linalg.qr(W)
    Q = Q * np.sign(np.diag(R))
    return SpectralResult(
        eigenvalues=vals,
        eigenvectors=V,
        overlap_signal=np.abs(V.T @ W),
        overlap_basis=np.abs(V.T @ Q),
        subspace_score=subspace_score(V, W),
        W_star=W,
        basis=Q,
        solver=solver,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[SpectralResult]
    rows: list[dict] = field(default_factory=list)

    def stat(self, name: str) -> np.ndarray:
        """Per-trial stack of one statistic."""
        return np.stack([_stats(r)[name] for r in self.trials])


def _stats(r: SpectralResult) -> dict[str, np.ndarray]:
    return {
        "eigenvalue": r.eigenvalues[:, None],
        "overlap_signal": r.overlap_signal,
        "overlap_signal_sq": r.overlap_signal**2,
        "overlap_basis": r.overlap_basis,
        "overlap_basis_sq": r.overlap_basis**2,
        "subspace_score": np.array([[r.subspace_score]]),
    }


def aggregate(cfg: ExperimentConfig, results: list[SpectralResult]) -> list[dict]:
    rows = []
    per = [_stats(r) for r in results]
    for name in per[0]:
        stack = np.stack([s[name] for s in per])
        mean = stack.mean(axis=0)
        std = stack.std(axis=0, ddof=1) if len(results) > 1 else np.zeros_like(mean)
        for i in range(mean.shape[0]):
            for j in range(mean.shape[1]):
                rows.append({"delta": cfg.delta, "n": cfg.n, "d": cfg.d, "preproc": cfg.preproc.name,
                             "stat_name": name, "i": i + 1, "j": j + 1, "mean": float(mean[i, j]),
                             "std": float(std[i, j]), "trials": len(results), "seed": cfg.seed})
    return rows


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """All trials of one configuration, each on its own substream."""

    def one(t):
        return run_trial(cfg, trial_rng(cfg.seed, cfg.grid_index, t))

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(one, range(cfg.trials)))
    else:
        results = [one(t) for t in range(cfg.trials)]
    return ExperimentResult(config=cfg, trials=results, rows=aggregate(cfg, results))


def sweep(cfg: ExperimentConfig, deltas) -> list[ExperimentResult]:
    """Run ``cfg`` at n = round(delta * d) for each delta; grid index = position in the sweep."""
    deltas = list(deltas)
    if not deltas:
        raise ValueError("empty delta grid")
    out = []
    for k, delta in enumerate(deltas):
        n = int(round(delta * cfg.d))
        out.append(run_experiment(replace(cfg, n=n, grid_index=k)))
    return out
