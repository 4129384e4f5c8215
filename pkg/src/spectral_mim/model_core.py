"""Link models, signal geometry and preprocessing functions.

A multi-index model generates ``y = q(W^T a, eps)`` from a Gaussian feature
vector ``a``.  After rotating the signal block to the upper-triangular
``W_tilde`` the same law is produced by ``y = q(W_tilde^T s, eps)`` with
``s ~ N(0, I_p)``, which is what every theory routine works with.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import bessel
from .errors import DegenerateSignals, InvalidDimension

log = logging.getLogger(__name__)

PRODUCT_FLOOR = -30.0


# ---------------------------------------------------------------- noise


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Either a finite list of (value, probability) atoms or a seeded sampler."""

    atoms: tuple[tuple[float, float], ...] | None = None
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    mean: float = 0.0
    variance: float = 0.0

    def __post_init__(self):
        if (self.atoms is None) == (self.sampler is None):
            raise ValueError("NoiseSpec needs exactly one of atoms or sampler")
        if self.atoms is not None:
            probs = np.array([p for _, p in self.atoms], dtype=float)
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ValueError("noise probabilities must be nonnegative and sum to 1")
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise ValueError("noise mean and variance must be finite")

    @classmethod
    def discrete(cls, atoms: Sequence[tuple[float, float]]) -> "NoiseSpec":
        atoms = tuple((float(v), float(p)) for v, p in atoms)
        probs = np.array([p for _, p in atoms])
        vals = np.array([v for v, _ in atoms])
        mean = float(probs @ vals)
        return cls(atoms=atoms, mean=mean, variance=float(probs @ (vals - mean) ** 2))

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls.discrete([(0.0, 1.0)])

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "NoiseSpec":
        return cls(sampler=lambda rng, size: sigma * rng.standard_normal(size),
                   mean=0.0, variance=sigma * sigma)

    @property
    def is_discrete(self) -> bool:
        return self.atoms is not None

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.atoms is not None:
            vals = np.array([v for v, _ in self.atoms])
            probs = np.array([p for _, p in self.atoms])
            if len(vals) == 1:
                return np.full(size, vals[0])
            return vals[rng.choice(len(vals), size=size, p=probs)]
        return np.asarray(self.sampler(rng, size), dtype=float)


@dataclass(frozen=True)
class YSupport:
    """Support of the response.

    ``scale`` sets the panel width used far from singular points and ``tail``
    the truncation distance of unbounded ends (both in units of y).
    """

    kind: str = "continuous"
    atoms: tuple[float, ...] = ()
    lower: float = -np.inf
    upper: float = np.inf
    singular_points: tuple[float, ...] = ()
    scale: float = 1.0
    tail: float = 50.0

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"


@dataclass(frozen=True, eq=False)
class Slice:
    """Exact representation of a noiseless link for one noise atom.

    Writing ``s = r * direction + complement @ u``, ``roots(y, u)`` returns the
    solutions r of ``q(s) = y`` as a list of ``(r, inv_jac)`` arrays (one entry
    per row of ``u``), where ``inv_jac = 1/|dq/dr|`` and zero marks a missing root.
    """

    direction: np.ndarray
    complement: np.ndarray
    roots: Callable[[float, np.ndarray], list[tuple[np.ndarray, np.ndarray]]]


def complement_basis(b: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of unit vector b."""
    p = len(b)
    if p == 1:
        return np.zeros((1, 0))
    q, _ = np.linalg.qr(np.column_stack([b, np.eye(p)]))
    comp = q[:, 1:p]
    return comp


# ---------------------------------------------------------------- signals


@dataclass(frozen=True, eq=False)
class SignalSpec:
    W_tilde: np.ndarray
    Sigma: np.ndarray
    W_star: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.W_tilde.shape[1]

    def key(self) -> bytes:
        return np.round(self.W_tilde, 15).tobytes()

    def realize(self, d: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """A d x p signal matrix with Gram matrix Sigma.

        Without ``rng`` the signals live in the first p coordinates, so the
        rotated basis vectors are the standard ones.  With ``rng`` they are
        embedded through a uniformly random orthonormal frame.
        """
        p = self.p
        if d < p:
            raise InvalidDimension(f"d={d} smaller than p={p}")
        if rng is None:
            frame = np.eye(d)[:, :p]
        else:
            frame, r = np.linalg.qr(rng.standard_normal((d, p)))
            frame = frame * np.sign(np.diag(r))
        return frame @ self.W_tilde

    def check_invariants(self) -> None:
        Wt = self.W_tilde
        if np.max(np.abs(np.linalg.norm(Wt, axis=0) - 1)) > 1e-12:
            raise DegenerateSignals("W_tilde columns are not unit norm")
        if np.max(np.abs(np.tril(Wt, -1))) > 0 or np.any(np.diag(Wt) <= 0):
            raise DegenerateSignals("W_tilde is not upper triangular with positive diagonal")
        if np.max(np.abs(Wt.T @ Wt - self.Sigma)) > 1e-12:
            raise DegenerateSignals("Sigma does not match W_tilde")
        if self.W_star is not None and np.max(np.abs(np.linalg.norm(self.W_star, axis=0) - 1)) > 1e-12:
            raise DegenerateSignals("W_star columns are not unit norm")


def _upper_factor(gram: np.ndarray) -> np.ndarray:
    p = gram.shape[0]
    evals = np.linalg.eigvalsh(gram)
    if evals[0] <= 1e-12 * max(1.0, evals[-1]):
        raise DegenerateSignals("signal Gram matrix is rank deficient")
    L = np.linalg.cholesky(gram)
    Wt = L.T.copy()
    # unit columns exactly, as the Gram diagonal is one up to rounding
    Wt /= np.linalg.norm(Wt, axis=0)
    Wt[np.tril_indices(p, -1)] = 0.0
    return Wt


def reparametrize(W: np.ndarray) -> SignalSpec:
    """Upper-triangular W_tilde with positive diagonal and the Gram matrix of W."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    norms = np.linalg.norm(W, axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise DegenerateSignals("signal columns must have unit norm")
    gram = W.T @ W
    gram = 0.5 * (gram + gram.T)
    np.fill_diagonal(gram, 1.0)
    Wt = _upper_factor(gram)
    return SignalSpec(W_tilde=Wt, Sigma=Wt.T @ Wt, W_star=W)


def make_signals(p: int, kind: str = "orthonormal", rho: float = 0.0, seed: int | None = None) -> SignalSpec:
    """Built-in signal geometries: orthonormal, equicorrelated, or random Gaussian."""
    if p < 1:
        raise InvalidDimension("p must be at least 1")
    if kind == "orthonormal":
        Wt = np.eye(p)
        return SignalSpec(W_tilde=Wt, Sigma=np.eye(p))
    if kind == "correlated":
        if abs(rho) >= 1:
            raise DegenerateSignals("|rho| must be below 1")
        gram = np.full((p, p), float(rho))
        np.fill_diagonal(gram, 1.0)
        Wt = _upper_factor(gram)
        return SignalSpec(W_tilde=Wt, Sigma=Wt.T @ Wt)
    if kind == "random_iid_gaussian":
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((p, p))
        G /= np.linalg.norm(G, axis=0)
        return reparametrize(G)
    raise ValueError(f"unknown signal kind {kind!r}")


# ---------------------------------------------------------------- link models


@dataclass(frozen=True, eq=False)
class LinkModel:
    """A link ``q``, its noise, and what is known about ``p(y | t)``.

    ``link`` is vectorized: ``t`` has shape (..., p) and ``eps`` shape (...).
    ``slicer`` maps a SignalSpec to ``[(probability, Slice), ...]`` for
    noiseless links; ``cond_density(y, t)`` is the conditional density (or
    mass, for discrete supports) of y given ``W_tilde^T s = t``.
    """

    name: str
    p: int
    link: Callable[[np.ndarray, np.ndarray], np.ndarray]
    noise: NoiseSpec
    y_support: YSupport
    cond_density: Callable[[float, np.ndarray], np.ndarray] | None = None
    slicer: Callable[[SignalSpec], list[tuple[float, Slice]]] | None = None
    permutation_invariant_coords: int | None = None
    params: dict = field(default_factory=dict)

    @property
    def has_density(self) -> bool:
        return self.cond_density is not None or self.slicer is not None

    def responses(self, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        t = np.atleast_2d(t)
        eps = self.noise.draw(rng, t.shape[0])
        return np.asarray(self.link(t, eps), dtype=float)

    def check_invariants(self, signals: SignalSpec | None = None, seed: int = 0) -> None:
        from .expectation import gauss_hermite_rule  # local import avoids a cycle

        rng = np.random.default_rng(seed)
        if self.permutation_invariant_coords:
            m = self.permutation_invariant_coords
            t = rng.standard_normal((200, self.p))
            eps = self.noise.draw(rng, 200)
            base = self.link(t, eps)
            for i in range(m):
                for j in range(i + 1, m):
                    tt = t.copy()
                    tt[:, [i, j]] = tt[:, [j, i]]
                    if np.max(np.abs(self.link(tt, eps) - base)) > 1e-12:
                        raise ValueError(f"link is not symmetric in coordinates {i}, {j}")
        if self.cond_density is None:
            return
        grid = gauss_hermite_rule(self.p, 3).points * 1.5
        for t in grid:
            if self.y_support.is_discrete:
                total = sum(float(self.cond_density(y, t[None, :])[0]) for y in self.y_support.atoms)
                if abs(total - 1) > 1e-8:
                    raise ValueError(f"conditional mass sums to {total} at t={t}")
            else:
                from scipy import integrate

                total, _ = integrate.quad(lambda y: float(self.cond_density(y, t[None, :])[0]),
                                          self.y_support.lower, self.y_support.upper, limit=200)
                if abs(total - 1) > 1e-6:
                    raise ValueError(f"conditional density integrates to {total} at t={t}")


def sample_pair(model: LinkModel, signals: SignalSpec, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    s = rng.standard_normal(model.p)
    y = model.responses((signals.W_tilde.T @ s)[None, :], rng)[0]
    return s, float(y)


def sample_pairs(model: LinkModel, signals: SignalSpec, n: int, rng: np.random.Generator):
    s = rng.standard_normal((n, model.p))
    return s, model.responses(s @ signals.W_tilde, rng)


def _product_slicer(signals: SignalSpec) -> list[tuple[float, Slice]]:
    # t1 = s1 and t2 = c12 s1 + c22 s2; solve for s2 given s1
    c12, c22 = signals.W_tilde[0, 1], signals.W_tilde[1, 1]

    def roots(y, u):
        s1 = u[:, 0]
        nz = s1 != 0
        safe = np.where(nz, s1, 1.0)
        r = np.where(nz, (y - c12 * s1 * s1) / (c22 * safe), 0.0)
        inv = np.where(nz, 1.0 / np.abs(c22 * safe), 0.0)
        return [(r, inv)]

    return [(1.0, Slice(direction=np.array([0.0, 1.0]), complement=np.array([[1.0], [0.0]]), roots=roots))]


def product_link() -> LinkModel:
    """y = t1 * t2, noiseless."""
    return LinkModel(
        name="product",
        p=2,
        link=lambda t, eps: t[..., 0] * t[..., 1],
        noise=NoiseSpec.none(),
        y_support=YSupport(singular_points=(0.0,), tail=50.0),
        slicer=_product_slicer,
        permutation_invariant_coords=2,
    )


def _abs_slice(direction: np.ndarray) -> Slice:
    def roots(y, u):
        one = np.ones(u.shape[0]) if y > 0 else np.zeros(u.shape[0])
        return [(np.full(u.shape[0], y), one), (np.full(u.shape[0], -y), one)]

    return Slice(direction=direction, complement=complement_basis(direction), roots=roots)


def mixed_phase_retrieval(eta: float = 0.6) -> LinkModel:
    """y = |t_eps| with P(eps = 1) = eta, eps in {1, 2}."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")

    def link(t, eps):
        idx = np.asarray(eps, dtype=int) - 1
        return np.abs(np.take_along_axis(t, idx[..., None], axis=-1)[..., 0])

    def slicer(signals: SignalSpec):
        Wt = signals.W_tilde
        return [(eta, _abs_slice(Wt[:, 0])), (1 - eta, _abs_slice(Wt[:, 1]))]

    return LinkModel(
        name="mixed_phase_retrieval",
        p=2,
        link=link,
        noise=NoiseSpec.discrete([(1.0, eta), (2.0, 1 - eta)]),
        y_support=YSupport(lower=0.0, tail=14.0),
        slicer=slicer,
        params={"eta": eta},
    )


def _phi(x):
    return np.exp(-0.5 * np.asarray(x) ** 2) / np.sqrt(2 * np.pi)


def single_index(name: str, sigma: float = 0.5) -> LinkModel:
    """p = 1 models: phase_retrieval, sign, probit, noisy_linear (t + sigma * eps)."""
    from scipy.special import ndtr

    if name == "phase_retrieval":
        return LinkModel(
            name="single_index:phase_retrieval", p=1,
            link=lambda t, eps: np.abs(t[..., 0]),
            noise=NoiseSpec.none(),
            y_support=YSupport(lower=0.0, tail=14.0),
            slicer=lambda sig: [(1.0, _abs_slice(sig.W_tilde[:, 0]))],
        )
    if name == "sign":
        return LinkModel(
            name="single_index:sign", p=1,
            link=lambda t, eps: np.where(t[..., 0] >= 0, 1.0, -1.0),
            noise=NoiseSpec.none(),
            y_support=YSupport(kind="discrete", atoms=(-1.0, 1.0)),
            cond_density=lambda y, t: ((t[..., 0] >= 0) == (y > 0)).astype(float),
        )
    if name == "probit":
        return LinkModel(
            name="single_index:probit", p=1,
            link=lambda t, eps: np.where(t[..., 0] + eps >= 0, 1.0, -1.0),
            noise=NoiseSpec.gaussian(sigma),
            y_support=YSupport(kind="discrete", atoms=(-1.0, 1.0)),
            cond_density=lambda y, t: ndtr(np.sign(y) * t[..., 0] / sigma),
            params={"sigma": sigma},
        )
    if name == "noisy_linear":
        return LinkModel(
            name="single_index:noisy_linear", p=1,
            link=lambda t, eps: t[..., 0] + eps,
            noise=NoiseSpec.gaussian(sigma),
            y_support=YSupport(scale=max(sigma, 0.25), tail=12.0),
            cond_density=lambda y, t: _phi((y - t[..., 0]) / sigma) / sigma,
            params={"sigma": sigma},
        )
    raise ValueError(f"unknown single-index model {name!r}")


def logistic_sign(p: int = 1, temperature: float = 1.0) -> LinkModel:
    """y in {-1, 1} with P(y = 1 | t) = sigmoid(sum(t) / temperature)."""

    def prob_plus(t):
        return 1.0 / (1.0 + np.exp(-np.sum(t, axis=-1) / temperature))

    def link(t, eps):
        return np.where(eps < prob_plus(t), 1.0, -1.0)

    return LinkModel(
        name="logistic_sign", p=p,
        link=link,
        noise=NoiseSpec(sampler=lambda rng, size: rng.random(size), mean=0.5, variance=1 / 12),
        y_support=YSupport(kind="discrete", atoms=(-1.0, 1.0)),
        cond_density=lambda y, t: prob_plus(t) if y > 0 else 1.0 - prob_plus(t),
        permutation_invariant_coords=p,
    )


def pure_noise(p: int = 2) -> LinkModel:
    """y = eps with eps standard Gaussian, independent of the signals."""
    return LinkModel(
        name="pure_noise", p=p,
        link=lambda t, eps: np.asarray(eps, dtype=float),
        noise=NoiseSpec.gaussian(1.0),
        y_support=YSupport(tail=12.0),
        cond_density=lambda y, t: np.full(np.shape(t)[:-1], float(_phi(y))),
    )


def builtin_model(name: str, **params) -> LinkModel:
    if name == "product":
        return product_link()
    if name == "mixed_phase_retrieval":
        return mixed_phase_retrieval(params.get("eta", 0.6))
    if name.startswith("single_index"):
        sub = params.get("link") or name.split(":", 1)[-1]
        return single_index(sub, params.get("sigma", 0.5))
    if name == "logistic_sign":
        return logistic_sign(params.get("p", 1), params.get("temperature", 1.0))
    if name == "pure_noise":
        return pure_noise(params.get("p", 2))
    raise ValueError(f"unknown model {name!r}")


# ---------------------------------------------------------------- preprocessing


@dataclass(frozen=True, eq=False)
class Preprocessing:
    """A bounded map y -> z with its declared essential supremum ``tau``.

    ``breakpoints`` lists y-values where the map jumps or kinks; quadrature
    meshes split panels there.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    tau: float
    bound: float
    breakpoints: tuple[float, ...] = ()
    params: dict = field(default_factory=dict)

    def __call__(self, y):
        return np.asarray(self.func(np.asarray(y, dtype=float)), dtype=float)

    def eval(self, y):
        return self(y)

    def check_invariants(self, model: LinkModel, signals: SignalSpec, n: int = 100_000, seed: int = 0) -> dict:
        """Sample-based sanity checks; returns diagnostics, raises on hard violations."""
        rng = np.random.default_rng(seed)
        _, y = sample_pairs(model, signals, n, rng)
        z = self(y)
        if np.max(np.abs(z)) > self.bound + 1e-12:
            raise ValueError(f"|T(y)| exceeds declared bound {self.bound}")
        if not np.any(z != 0):
            raise ValueError("preprocessed law is the point mass at zero")
        if np.max(z) > self.tau + 1e-9:
            raise ValueError(f"sample maximum {np.max(z)} exceeds tau={self.tau}")
        gap = self.tau - float(np.max(z))
        if gap > 1e-6:
            log.info("preprocessing %s: sample max is %.3g below tau", self.name, gap)
        return {"sample_max": float(np.max(z)), "tau_gap": gap}


def constant(c: float = 1.0) -> Preprocessing:
    return Preprocessing(name=f"constant({c:g})", func=lambda y: np.full(np.shape(y), float(c)),
                         tau=float(c), bound=abs(float(c)), params={"c": c})


def _bessel_ratio(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k0e, k1e = bessel.k0k1e(a)
    return k0e, k1e


def t_star_product_raw(y) -> np.ndarray:
    """Closed-form optimal map for the product link; y = 0 maps to -inf."""
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    out = np.full(y.shape, -np.inf)
    nz = a > 0
    if np.any(nz):
        k0e, k1e = _bessel_ratio(a[nz])
        out[nz] = 1.0 - 1.0 / (y[nz] + a[nz] * k1e / k0e)
    return out


def product_optimal(floor: float = PRODUCT_FLOOR) -> Preprocessing:
    """Optimal product-link map, floored so that it is bounded."""
    return Preprocessing(name="product_optimal", func=lambda y: np.maximum(t_star_product_raw(y), floor),
                         tau=1.0, bound=abs(floor), params={"floor": floor})


def product_symmetric(floor: float = PRODUCT_FLOOR) -> Preprocessing:
    """Even companion 1 - K0(|y|)/(|y| K1(|y|)): gives R^inf proportional to I."""

    def f(y):
        a = np.abs(np.asarray(y, dtype=float))
        out = np.full(a.shape, floor)
        nz = a > 0
        if np.any(nz):
            k0e, k1e = _bessel_ratio(a[nz])
            out[nz] = np.maximum(1.0 - k0e / (a[nz] * k1e), floor)
        return out

    return Preprocessing(name="product_symmetric", func=f, tau=1.0, bound=abs(floor), params={"floor": floor})


def quadratic_clip(level: float = 10.0) -> Preprocessing:
    return Preprocessing(name=f"quadratic_clip({level:g})", func=lambda y: np.minimum(y * y, level),
                         tau=level, bound=level, breakpoints=(np.sqrt(level), -np.sqrt(level)),
                         params={"level": level})


def trimming(level: float = 7.0) -> Preprocessing:
    return Preprocessing(name=f"trimming({level:g})", func=lambda y: np.where(y * y <= level, y * y, 0.0),
                         tau=level, bound=level, breakpoints=(np.sqrt(level), -np.sqrt(level)),
                         params={"level": level})


def subset(level: float = 2.0) -> Preprocessing:
    return Preprocessing(name=f"subset({level:g})", func=lambda y: (y * y > level).astype(float),
                         tau=1.0, bound=1.0, breakpoints=(np.sqrt(level), -np.sqrt(level)),
                         params={"level": level})


def pr_nonmixed_optimal(floor: float = -10.0) -> Preprocessing:
    """max(1 - 1/y^2, floor): truncated optimal map for non-mixed phase retrieval."""

    def f(y):
        y2 = np.asarray(y, dtype=float) ** 2
        with np.errstate(divide="ignore"):
            return np.maximum(1.0 - 1.0 / y2, floor)

    edge = 1.0 / np.sqrt(1.0 - floor)
    return Preprocessing(name="pr_nonmixed_optimal", func=f, tau=1.0, bound=abs(floor),
                         breakpoints=(edge, -edge), params={"floor": floor})


def clipped_identity(level: float = 3.0) -> Preprocessing:
    return Preprocessing(name=f"clipped_identity({level:g})", func=lambda y: np.clip(y, -level, level),
                         tau=level, bound=level, breakpoints=(level, -level), params={"level": level})


def builtin_preprocessing(name: str, **params) -> Preprocessing:
    table = {
        "constant": lambda: constant(params.get("c", 1.0)),
        "product_optimal": lambda: product_optimal(params.get("floor", PRODUCT_FLOOR)),
        "product_symmetric": lambda: product_symmetric(params.get("floor", PRODUCT_FLOOR)),
        "quadratic_clip": lambda: quadratic_clip(params.get("level", 10.0)),
        "trimming": lambda: trimming(params.get("level", 7.0)),
        "subset": lambda: subset(params.get("level", 2.0)),
        "pr_nonmixed_optimal": lambda: pr_nonmixed_optimal(params.get("floor", -10.0)),
        "clipped_identity": lambda: clipped_identity(params.get("level", 3.0)),
    }
    if name == "mixed_pr_optimal":
        from .optimal_design import t_star_mixed_pr

        return t_star_mixed_pr(params.get("eta", 0.6), params.get("rho", 0.3), params.get("delta", 10.0))
    if name not in table:
        raise ValueError(f"unknown preprocessing {name!r}")
    return table[name]()
