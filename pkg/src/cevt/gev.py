"""Generalized extreme value (GEV) distribution.

Closed-form density, CDF and quantile, inverse-CDF sampling, a penalised
negative log-likelihood and maximum-likelihood fitting with the simplex
optimiser in :mod:`cevt.simplex`.

Shape convention: ``xi > 0`` is the heavy (Frechet) tail, ``xi < 0`` the
bounded (reversed Weibull) tail, ``|xi| < XI_EPS`` the Gumbel limit. Note
that ``scipy.stats.genextreme`` uses ``c = -xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDataError,
    DomainError,
    GevParameterError,
    InsufficientDataError,
)
from .simplex import nelder_mead

XI_EPS = 1e-6
PENALTY = 1e10
EULER_GAMMA = 0.5772156649015329
# Below xi = -1 the likelihood is unbounded at the upper end point.
XI_MIN = -1.0


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        for name in ("mu", "sigma", "xi"):
            value = getattr(self, name)
            if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
                raise GevParameterError(f"{name} must be a finite real, got {value!r}")
        if self.sigma <= 0:
            raise GevParameterError(f"sigma must be > 0, got {self.sigma}")

    @property
    def is_gumbel(self) -> bool:
        return abs(self.xi) < XI_EPS

    def support(self) -> tuple[float, float]:
        """Return the (lower, upper) end points of the support."""
        if self.is_gumbel:
            return -math.inf, math.inf
        bound = self.mu - self.sigma / self.xi
        if self.xi > 0:
            return bound, math.inf
        return -math.inf, bound

    def as_tuple(self) -> tuple[float, float, float]:
        return float(self.mu), float(self.sigma), float(self.xi)


@dataclass(frozen=True)
class FitOptions:
    max_iters: int = 2000
    tol: float = 1e-8
    min_samples: int = 10
    restarts: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.min_samples < 2:
            raise ValueError("min_samples must be >= 2")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")


def _check(p: GevParams) -> GevParams:
    if not isinstance(p, GevParams):
        raise GevParameterError(f"expected GevParams, got {type(p).__name__}")
    return p


def _scalar_or_array(x, out):
    return float(out) if np.ndim(x) == 0 else out


def _reduced(x, p: GevParams):
    """Return (y, t, inside) with y=(x-mu)/sigma and t=1+xi*y."""
    y = (np.asarray(x, dtype=float) - p.mu) / p.sigma
    if p.is_gumbel:
        return y, None, np.ones_like(y, dtype=bool)
    t = 1.0 + p.xi * y
    return y, t, t > 0


def _log_t_power(y, t, inside, xi):
    """ln t^(-1/xi) = -log1p(xi*y)/xi on the support, nan elsewhere."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(inside, -np.log1p(xi * y) / xi, np.nan)


def gev_cdf(x, p: GevParams):
    """CDF of the GEV; 0 below a lower end point and 1 above an upper one."""
    _check(p)
    y, t, inside = _reduced(x, p)
    if t is None:
        out = np.exp(-np.exp(-y))
    else:
        s = np.exp(_log_t_power(y, t, inside, p.xi))
        outside = 0.0 if p.xi > 0 else 1.0
        out = np.where(inside, np.exp(-np.where(inside, s, 0.0)), outside)
    return _scalar_or_array(x, out)


def gev_pdf(x, p: GevParams):
    """Density of the GEV, exactly zero outside the support."""
    _check(p)
    y, t, inside = _reduced(x, p)
    if t is None:
        with np.errstate(over="ignore"):
            out = np.exp(-y - np.exp(-y)) / p.sigma
    else:
        logs = _log_t_power(y, t, inside, p.xi)
        with np.errstate(over="ignore", invalid="ignore"):
            # t^(-1/xi - 1) = exp((1 + xi) * ln t^(-1/xi))
            dens = np.exp((1.0 + p.xi) * logs - np.exp(logs)) / p.sigma
        out = np.where(inside, np.nan_to_num(dens, nan=0.0), 0.0)
    return _scalar_or_array(x, out)


def gev_quantile(prob, p: GevParams):
    """Inverse CDF: the x with ``gev_cdf(x, p) == prob`` for prob in (0, 1)."""
    _check(p)
    q = np.asarray(prob, dtype=float)
    if np.any(~(q > 0) | ~(q < 1)):
        raise DomainError("quantile probability must lie strictly inside (0, 1)")
    loglog = np.log(-np.log(q))
    if p.is_gumbel:
        out = p.mu - p.sigma * loglog
    else:
        # (sigma/xi) * ((-ln q)^(-xi) - 1) written with expm1 for small xi
        out = p.mu + p.sigma * np.expm1(-p.xi * loglog) / p.xi
    return _scalar_or_array(prob, out)


def gev_logpdf_inside(x: np.ndarray, p: GevParams) -> tuple[np.ndarray, np.ndarray]:
    """Log-density over the support and the support mask."""
    y, t, inside = _reduced(x, p)
    if t is None:
        return -math.log(p.sigma) - y - np.exp(-y), inside
    logs = _log_t_power(y, t, inside, p.xi)
    with np.errstate(over="ignore"):
        logpdf = -math.log(p.sigma) + (1.0 + p.xi) * logs - np.exp(logs)
    return logpdf, inside


def gev_nll(samples, p: GevParams) -> float:
    """Negative log-likelihood of ``samples``.

    Points outside the support add ``PENALTY`` each on top of the NLL of the
    in-support points, so a search that strays outside is pushed back.
    """
    _check(p)
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("gev_nll needs at least one sample")
    logpdf, inside = gev_logpdf_inside(x, p)
    n_out = int(x.size - np.count_nonzero(inside))
    base = -float(np.sum(logpdf[inside]))
    if not math.isfinite(base):
        base = PENALTY * x.size
    return base + PENALTY * n_out


def gev_sample(p: GevParams, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` values by inverse-CDF sampling; deterministic per seed."""
    _check(p)
    if n < 0:
        raise DomainError("sample count must be non-negative")
    rng = np.random.default_rng(seed)
    # midpoints of a 2^53 grid: uniform strictly inside (0, 1)
    u = (rng.integers(0, 2**53, size=n, dtype=np.int64).astype(float) + 0.5) / 2.0**53
    return np.asarray(gev_quantile(u, p), dtype=float).reshape(n)


def gumbel_moment_init(samples) -> GevParams:
    """Gumbel method-of-moments start with a light positive shape."""
    x = np.asarray(samples, dtype=float)
    s = float(np.std(x, ddof=1))
    sigma0 = s * math.sqrt(6.0) / math.pi
    mu0 = float(np.mean(x)) - EULER_GAMMA * sigma0
    return GevParams(mu0, sigma0, 0.1)


def _objective(samples: np.ndarray):
    n = samples.size

    def f(theta: np.ndarray) -> float:
        mu, log_sigma, xi = theta
        if not (np.isfinite(theta).all() and -700 < log_sigma < 700) or xi < XI_MIN:
            return PENALTY * (n + 1)
        return gev_nll(samples, GevParams(float(mu), math.exp(log_sigma), float(xi)))

    return f


@dataclass(frozen=True)
class GevFit:
    params: GevParams
    nll: float
    init_nll: float
    iterations: int


def fit_gev_detailed(samples, opts: FitOptions | None = None) -> GevFit:
    """Maximum-likelihood fit returning diagnostics alongside the parameters."""
    opts = opts or FitOptions()
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < opts.min_samples:
        raise InsufficientDataError(
            f"need at least {opts.min_samples} samples to fit a GEV, got {x.size}"
        )
    if not np.all(np.isfinite(x)):
        raise DomainError("samples must be finite")
    if np.ptp(x) == 0:
        raise DegenerateDataError("samples have zero variance")

    init = gumbel_moment_init(x)
    f = _objective(x)
    theta0 = np.array([init.mu, math.log(init.sigma), init.xi])
    steps = np.array([0.2 * init.sigma, 0.2, 0.1])
    init_nll = f(theta0)

    res = nelder_mead(f, theta0, steps=steps, tol=opts.tol, max_iters=opts.max_iters)
    best_x, best_f, iters = res.x, res.fun, res.iterations
    rng = np.random.default_rng(opts.seed)
    for _ in range(opts.restarts):
        jitter = steps * rng.uniform(0.5, 1.5, size=3) * rng.choice([-1.0, 1.0], size=3)
        res = nelder_mead(f, best_x, steps=jitter, tol=opts.tol, max_iters=opts.max_iters)
        iters += res.iterations
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun

    mu, log_sigma, xi = best_x
    params = GevParams(float(mu), math.exp(log_sigma), float(xi))
    return GevFit(params=params, nll=float(best_f), init_nll=float(init_nll), iterations=iters)


def fit_gev(samples, opts: FitOptions | None = None) -> GevParams:
    """Fit a GEV to ``samples`` by maximum likelihood.

    Starts from the Gumbel moment estimate and runs the simplex search on
    ``(mu, ln sigma, xi)`` followed by ``opts.restarts`` jittered restarts
    from the incumbent.

    Raises:
        InsufficientDataError: fewer than ``opts.min_samples`` samples.
        DegenerateDataError: all samples equal.
    """
    return fit_gev_detailed(samples, opts).params
