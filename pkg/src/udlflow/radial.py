"""k-radial base distributions on R^d built from 1-D norm distributions.

A k-radial density depends on the input only through its l_k norm:
p(x) = g(|x|_k). Given a density rho on the nonnegative reals for the
norm itself, the profile is

    g(r) = rho(r) / (d/dr) V_k^d(r)

where V_k^d(r) is the volume of the l_k ball of radius r. When g is
strictly decreasing, the upper density level set carrying probability q
is exactly the open norm ball of radius quantile_rho(q), which is what
makes these bases useful: the level set is linear-constraint definable
for k in {1, inf}.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats
from scipy.special import gammaln

from . import numerics as nm
from .errors import ContractError, NonMonotonicProfileError

NORM_KINDS = ("lognormal", "gamma", "gamma-mixture", "half-normal", "exponential")

_LOG_2PI = math.log(2.0 * math.pi)


def _check_k(k):
    if k not in (1, 2, np.inf):
        raise ContractError(f"unsupported norm order {k!r}; expected 1, 2 or inf")
    return k


def ball_volume(d: int, k, r: float) -> float:
    """Volume of the l_k ball of radius r in R^d."""
    _check_k(k)
    if r < 0:
        raise ContractError("radius must be nonnegative")
    if d <= 0:
        raise ContractError("dimension must be positive")
    if k == 1:
        return (2.0 * r) ** d / math.factorial(d)
    if k == 2:
        return math.pi ** (d / 2.0) * r ** d / math.gamma(d / 2.0 + 1.0)
    return (2.0 * r) ** d


def log_surface(d: int, k, r) -> np.ndarray:
    """log of dV_k^d/dr, the surface term of the radial construction.

    All three cases share the shape c * r^(d-1); only log c differs.
    r must be positive.
    """
    r = np.asarray(r, dtype=np.float64)
    return _log_surface_const(d, k) + (d - 1) * np.log(r)


def _log_surface_const(d: int, k) -> float:
    _check_k(k)
    if k == 1:
        return d * math.log(2.0) - gammaln(d)
    if k == 2:
        return math.log(d) + (d / 2.0) * math.log(math.pi) - gammaln(d / 2.0 + 1.0)
    return math.log(d) + d * math.log(2.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


class NormDistribution:
    """One-dimensional density of the norm |X|_k, on [0, inf).

    Parameters live in a single unconstrained vector (positives are
    log-transformed, mixture weights are logits) so gradient training
    can never leave the valid region. The constructor classmethods take
    natural parameters.
    """

    def __init__(self, kind: str, theta: np.ndarray, learnable: bool = True):
        if kind not in NORM_KINDS:
            raise ContractError(f"unknown norm distribution kind {kind!r}")
        self.kind = kind
        self.theta = nm.Tensor(np.asarray(theta, dtype=np.float64),
                               requires_grad=learnable)
        self.learnable = learnable

    # -- constructors ----------------------------------------------------

    @classmethod
    def exponential(cls, scale: float = 1.0, learnable: bool = True):
        return cls("exponential", [math.log(scale)], learnable)

    @classmethod
    def gamma(cls, shape: float, scale: float = 1.0, learnable: bool = True):
        return cls("gamma", [math.log(shape), math.log(scale)], learnable)

    @classmethod
    def gamma_mixture(cls, shapes, scales, weights=None, learnable: bool = True):
        shapes = np.asarray(shapes, dtype=np.float64)
        scales = np.asarray(scales, dtype=np.float64)
        if shapes.shape != scales.shape or shapes.ndim != 1:
            raise ContractError("shapes and scales must be equal-length vectors")
        if weights is None:
            weights = np.full(shapes.size, 1.0 / shapes.size)
        weights = np.asarray(weights, dtype=np.float64)
        theta = np.concatenate([np.log(shapes), np.log(scales), np.log(weights)])
        return cls("gamma-mixture", theta, learnable)

    @classmethod
    def half_normal(cls, sigma: float = 1.0, learnable: bool = True):
        return cls("half-normal", [math.log(sigma)], learnable)

    @classmethod
    def lognormal(cls, mu: float = 0.0, sigma: float = 1.0, learnable: bool = True):
        return cls("lognormal", [mu, math.log(sigma)], learnable)

    # -- parameter access ------------------------------------------------

    def parameters(self) -> list:
        return [self.theta] if self.learnable else []

    @property
    def n_components(self) -> int:
        return self.theta.size // 3 if self.kind == "gamma-mixture" else 1

    def _natural(self):
        """Current natural parameters as plain floats/arrays."""
        t = self.theta.data
        if self.kind == "exponential":
            return {"scale": math.exp(t[0])}
        if self.kind == "gamma":
            return {"shape": math.exp(t[0]), "scale": math.exp(t[1])}
        if self.kind == "half-normal":
            return {"sigma": math.exp(t[0])}
        if self.kind == "lognormal":
            return {"mu": t[0], "sigma": math.exp(t[1])}
        m = self.n_components
        return {"shapes": np.exp(t[:m]), "scales": np.exp(t[m:2 * m]),
                "weights": softmax(t[2 * m:])}

    def _frozen(self):
        p = self._natural()
        if self.kind == "exponential":
            return stats.expon(scale=p["scale"])
        if self.kind == "gamma":
            return stats.gamma(p["shape"], scale=p["scale"])
        if self.kind == "half-normal":
            return stats.halfnorm(scale=p["sigma"])
        if self.kind == "lognormal":
            return stats.lognorm(s=p["sigma"], scale=math.exp(p["mu"]))
        return None  # mixture handled explicitly

    # -- numpy-side statistics ---------------------------------------------

    def pdf(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "gamma-mixture":
            p = self._natural()
            out = np.zeros_like(r)
            for w, a, s in zip(p["weights"], p["shapes"], p["scales"]):
                out += w * stats.gamma.pdf(r, a, scale=s)
            return out
        return self._frozen().pdf(r)

    def cdf(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "gamma-mixture":
            p = self._natural()
            out = np.zeros_like(r)
            for w, a, s in zip(p["weights"], p["shapes"], p["scales"]):
                out += w * stats.gamma.cdf(r, a, scale=s)
            return out
        return self._frozen().cdf(r)

    def quantile(self, q) -> np.ndarray:
        """Inverse CDF. Mixtures use monotone bisection to 1e-10."""
        q = np.asarray(q, dtype=np.float64)
        if np.any((q < 0) | (q > 1)):
            raise ContractError("quantile levels must lie in [0, 1]")
        if self.kind != "gamma-mixture":
            return self._frozen().ppf(q)
        scalar = q.ndim == 0
        qs = np.atleast_1d(q)
        out = np.empty_like(qs)
        p = self._natural()
        hi0 = float(max(stats.gamma.ppf(0.999999999, a, scale=s)
                        for a, s in zip(p["shapes"], p["scales"])))
        for i, qi in enumerate(qs):
            if qi <= 0.0:
                out[i] = 0.0
                continue
            if qi >= 1.0:
                out[i] = np.inf
                continue
            lo, hi = 0.0, hi0
            while self.cdf(hi) < qi:
                hi *= 2.0
            while hi - lo > 1e-10 * max(1.0, hi):
                mid = 0.5 * (lo + hi)
                if self.cdf(mid) < qi:
                    lo = mid
                else:
                    hi = mid
            out[i] = 0.5 * (lo + hi)
        return out[0] if scalar else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gamma-mixture":
            p = self._natural()
            comp = rng.choice(p["weights"].size, size=n, p=p["weights"])
            return rng.gamma(p["shapes"][comp], p["scales"][comp])
        p = self._natural()
        if self.kind == "exponential":
            return rng.exponential(p["scale"], size=n)
        if self.kind == "gamma":
            return rng.gamma(p["shape"], p["scale"], size=n)
        if self.kind == "half-normal":
            return np.abs(rng.normal(0.0, p["sigma"], size=n))
        return rng.lognormal(p["mu"], p["sigma"], size=n)

    def mean(self) -> float:
        p = self._natural()
        if self.kind == "exponential":
            return p["scale"]
        if self.kind == "gamma":
            return p["shape"] * p["scale"]
        if self.kind == "half-normal":
            return p["sigma"] * math.sqrt(2.0 / math.pi)
        if self.kind == "lognormal":
            return math.exp(p["mu"] + p["sigma"] ** 2 / 2.0)
        return float(np.sum(p["weights"] * p["shapes"] * p["scales"]))

    # -- traced log-pdf for likelihood training -----------------------------

    def log_pdf_t(self, r: nm.Tensor) -> nm.Tensor:
        """log rho(r) as a tape operation; r must be positive."""
        t = self.theta
        logr = nm.log(r)
        if self.kind == "exponential":
            log_scale = nm.take(t, np.array([0]))
            return -r * nm.exp(-log_scale) - log_scale
        if self.kind == "gamma":
            return self._gamma_log_pdf_t(r, logr, nm.take(t, np.array([0])),
                                         nm.take(t, np.array([1])))
        if self.kind == "half-normal":
            log_sigma = nm.take(t, np.array([0]))
            z = r * nm.exp(-log_sigma)
            return 0.5 * math.log(2.0 / math.pi) - log_sigma - 0.5 * z * z
        if self.kind == "lognormal":
            mu = nm.take(t, np.array([0]))
            log_sigma = nm.take(t, np.array([1]))
            z = (logr - mu) * nm.exp(-log_sigma)
            return -logr - log_sigma - 0.5 * _LOG_2PI - 0.5 * z * z
        m = self.n_components
        log_w = self._log_weights_t()
        comps = []
        for j in range(m):
            lp = self._gamma_log_pdf_t(r, logr,
                                       nm.take(t, np.array([j])),
                                       nm.take(t, np.array([m + j])))
            comps.append(lp + nm.take(log_w, np.array([j])))
        return self._mixture_logsumexp(comps)

    @staticmethod
    def _gamma_log_pdf_t(r, logr, log_shape, log_scale) -> nm.Tensor:
        shape = nm.exp(log_shape)
        return ((shape - 1.0) * logr - r * nm.exp(-log_scale)
                - shape * log_scale - nm.lgamma(shape))

    def _log_weights_t(self) -> nm.Tensor:
        m = self.n_components
        logits = nm.take(self.theta, np.arange(2 * m, 3 * m))
        return logits - nm.logsumexp(nm.reshape(logits, (1, m)), axis=1)

    @staticmethod
    def _mixture_logsumexp(columns) -> nm.Tensor:
        # stack the per-component columns into an (n, m) tensor by summing
        # disjoint embeddings, then reduce
        n = columns[0].shape[0]
        m = len(columns)
        total = None
        for j, col in enumerate(columns):
            idx = np.arange(n) * m + j
            emb = nm.put(nm.reshape(col, (-1,)), (n, m), idx)
            total = emb if total is None else total + emb
        return nm.logsumexp(total, axis=1)


class RadialBase:
    """d-dimensional k-radial distribution with norm distribution rho."""

    def __init__(self, dim: int, k, dist: NormDistribution):
        if dim <= 0:
            raise ContractError("dimension must be positive")
        self.dim = int(dim)
        self.k = _check_k(k)
        self.dist = dist
        self._monotonic = None

    @classmethod
    def make(cls, dim: int, k, kind: str, learnable: bool = True) -> "RadialBase":
        """Default-initialized base of the given norm-distribution kind.

        Gamma starts at shape=dim so the k=1 construction begins at the
        product-Laplace density (log-affine profile); the mixture spreads
        three such components across scales.
        """
        if kind == "exponential":
            dist = NormDistribution.exponential(1.0, learnable)
        elif kind == "gamma":
            dist = NormDistribution.gamma(float(dim), 1.0, learnable)
        elif kind == "gamma-mixture":
            dist = NormDistribution.gamma_mixture(
                [float(dim)] * 3, [0.5, 1.0, 2.0], learnable=learnable)
        elif kind == "half-normal":
            dist = NormDistribution.half_normal(1.0, learnable)
        elif kind == "lognormal":
            dist = NormDistribution.lognormal(math.log(max(dim, 2)), 0.5, learnable)
        else:
            raise ContractError(f"unknown norm distribution kind {kind!r}")
        return cls(dim, k, dist)

    def parameters(self) -> list:
        return self.dist.parameters()

    # -- profile and density -----------------------------------------------

    def log_profile(self, r) -> np.ndarray:
        """log g(r) = log rho(r) - log dV/dr, with the r=0 limit handled.

        At r=0 and d>1 the surface term vanishes, so the profile limit is
        +inf unless rho itself decays at least like r^(d-1); gamma-family
        norm distributions with shape=d give a finite limit, lognormal
        always gives -inf.
        """
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        out = np.empty_like(r)
        pos = r > 0
        with np.errstate(divide="ignore"):
            out[pos] = np.log(self.dist.pdf(r[pos])) - log_surface(
                self.dim, self.k, r[pos])
        if np.any(~pos):
            out[~pos] = self._log_profile_zero_limit()
        return out

    def _log_profile_zero_limit(self) -> float:
        d, dist = self.dim, self.dist
        c = _log_surface_const(d, self.k)
        if dist.kind in ("gamma", "gamma-mixture"):
            p = dist._natural()
            if dist.kind == "gamma":
                shapes = np.array([p["shape"]])
                scales = np.array([p["scale"]])
                weights = np.array([1.0])
            else:
                shapes, scales, weights = p["shapes"], p["scales"], p["weights"]
            amin = shapes.min()
            if amin < d - 1e-12:
                return np.inf
            if amin > d + 1e-12:
                return -np.inf
            mask = np.abs(shapes - d) <= 1e-12
            val = np.sum(weights[mask] / (scales[mask] ** d * np.exp(gammaln(d))))
            return math.log(val) - c
        if dist.kind in ("exponential", "half-normal"):
            if d > 1:
                return np.inf
            return math.log(dist.pdf(np.array([0.0]))[0]) - c
        return -np.inf  # lognormal vanishes faster than any power

    def log_density(self, x) -> np.ndarray:
        """log p(x) for a batch of points; x is (n, d) or (d,)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r = self._norm(x)
        return self.log_profile(r)

    def log_density_t(self, z: nm.Tensor) -> nm.Tensor:
        """Traced log-density of an (n, d) batch, for likelihood training."""
        r = nm.norm(z, self.k, axis=1)
        return (self.dist.log_pdf_t(r)
                - (_log_surface_const(self.dim, self.k)
                   + (self.dim - 1) * nm.log(r)))

    def _norm(self, x: np.ndarray) -> np.ndarray:
        if self.k == 1:
            return np.abs(x).sum(axis=-1)
        if self.k == 2:
            return np.sqrt((x * x).sum(axis=-1))
        return np.abs(x).max(axis=-1)

    def norm_of(self, x) -> np.ndarray:
        return self._norm(np.atleast_2d(np.asarray(x, dtype=np.float64)))

    def norm_cdf(self, r) -> np.ndarray:
        return self.dist.cdf(r)

    def norm_quantile(self, q) -> np.ndarray:
        return self.dist.quantile(q)

    # -- level sets ----------------------------------------------------------

    @property
    def radial_monotonic(self) -> bool:
        """Grid check: is the profile strictly decreasing on the support?"""
        if self._monotonic is None:
            qs = np.linspace(1e-4, 1.0 - 1e-4, 256)
            grid = np.unique(self.dist.quantile(qs))
            grid = grid[grid > 0]
            vals = self.log_profile(grid)
            self._monotonic = bool(np.all(np.diff(vals) < 0))
        return self._monotonic

    def udl_radius(self, q: float) -> float:
        """Norm radius of the upper density level set carrying mass q."""
        if not 0.0 <= q <= 1.0:
            raise ContractError("q must lie in [0, 1]")
        if not self.radial_monotonic:
            raise NonMonotonicProfileError(
                f"{self.dist.kind} profile is not strictly decreasing in "
                f"dimension {self.dim}; its level sets are shells, which "
                "this package does not encode")
        if q == 0.0:
            return 0.0
        return float(self.dist.quantile(q))

    # -- sampling --------------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n draws, each radius * (uniform direction on the unit l_k sphere)."""
        r = self.dist.sample(n, rng)
        u = self.unit_sphere(n, rng)
        return u * r[:, None]

    def unit_sphere(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.dim
        if self.k == 2:
            g = rng.standard_normal((n, d))
            return g / np.linalg.norm(g, axis=1, keepdims=True)
        if self.k == 1:
            mags = rng.dirichlet(np.ones(d), size=n)
            signs = rng.choice([-1.0, 1.0], size=(n, d))
            return mags * signs
        u = rng.uniform(-1.0, 1.0, size=(n, d))
        face = rng.integers(0, d, size=n)
        sign = rng.choice([-1.0, 1.0], size=n)
        u[np.arange(n), face] = sign
        return u


class StandardNormalBase:
    """Fixed N(0, I_d), viewed as the 2-radial base of the coupling-only
    baseline. The norm distribution is chi(d); no learnable parameters."""

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.k = 2
        self.dist = None

    kind = "standard-normal"

    def parameters(self) -> list:
        return []

    @property
    def radial_monotonic(self) -> bool:
        return True

    def log_density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return -0.5 * (x * x).sum(axis=-1) - 0.5 * self.dim * _LOG_2PI

    def log_density_t(self, z: nm.Tensor) -> nm.Tensor:
        return (-0.5) * nm.tsum(z * z, axis=1) - 0.5 * self.dim * _LOG_2PI

    def norm_of(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.sqrt((x * x).sum(axis=-1))

    def norm_cdf(self, r) -> np.ndarray:
        return stats.chi.cdf(r, df=self.dim)

    def norm_quantile(self, q) -> np.ndarray:
        return stats.chi.ppf(q, df=self.dim)

    def udl_radius(self, q: float) -> float:
        if not 0.0 <= q <= 1.0:
            raise ContractError("q must lie in [0, 1]")
        return float(stats.chi.ppf(q, df=self.dim))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim))
