"""Ensemble model averaging with Gaussian kernels.

Each member's forecast is bias-corrected by ordinary least squares; the
predictive law is a mixture of Gaussians centered on the corrected forecasts
with one shared variance, and the weights and variance are estimated by
expectation maximization over the training window. A spatial extension fits
one error-correlation model per member on that member's standardized
residuals and samples whole fields member by member.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import (
    VARIANCE_FLOOR,
    EnsembleDataset,
    ForecastFieldSample,
    MixturePredictive,
    StationSet,
    TrainingWindow,
    _readonly,
)
from .spatial import (
    StandardizedErrorPanel,
    VariogramFit,
    build_correlation_matrix,
    cholesky_with_jitter,
    empirical_variogram,
    fit_variogram,
)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BmaParams:
    """Per-member bias corrections and weights with one shared variance."""

    a: np.ndarray
    b: np.ndarray
    w: np.ndarray
    sigma2: float
    n_iter: int = 0
    converged: bool = True
    loglik: float = float("nan")

    def __post_init__(self):
        a = np.array(self.a, dtype=float).ravel()
        b = np.array(self.b, dtype=float).ravel()
        w = np.array(self.w, dtype=float).ravel()
        if not (a.size == b.size == w.size) or a.size == 0:
            raise ValueError("a, b, w must share a positive length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be non-negative and sum to one")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "a", _readonly(a))
        object.__setattr__(self, "b", _readonly(b))
        object.__setattr__(self, "w", _readonly(w))

    @property
    def members(self) -> int:
        return self.w.size


@dataclass(frozen=True)
class SpatialBmaParams:
    """Mixture parameters plus one fitted error-correlation model per member."""

    bma: BmaParams
    variograms: tuple[VariogramFit, ...]

    def __post_init__(self):
        object.__setattr__(self, "variograms", tuple(self.variograms))
        if len(self.variograms) != self.bma.members:
            raise ValueError("one variogram fit per member required")


def _member_rows(data: EnsembleDataset, window: TrainingWindow):
    day_idx = np.array([data.day_index(d) for d in window.training_days])
    F = data.forecasts[day_idx]          # (T, S, M)
    Y = data.observations[day_idx]       # (T, S)
    return F, Y


def fit_bma(
    data: EnsembleDataset,
    window: TrainingWindow,
    em_tol: float = 1e-6,
    *,
    max_iter: int = 500,
) -> BmaParams:
    """OLS bias correction per member, then EM for weights and variance.

    EM starts from uniform weights and the pooled OLS residual variance, and
    runs on complete cases (observation and every member present) until the
    log-likelihood gain drops below em_tol. The log-likelihood never
    decreases; a decrease beyond rounding is an error.
    """
    F, Y = _member_rows(data, window)
    M = data.members
    obs_ok = ~np.isnan(Y)
    if not obs_ok.any():
        raise ValueError("no observations in the training window")

    a = np.zeros(M)
    b = np.zeros(M)
    ss_resid = 0.0
    n_resid = 0
    for m in range(M):
        x = F[:, :, m]
        rows = obs_ok & ~np.isnan(x)
        if not rows.any():
            raise ValueError(f"member {m + 1} has no usable training rows")
        xm, ym = x[rows], Y[rows]
        var_x = float(xm.var())
        if var_x < 1e-12:
            warnings.warn(f"member {m + 1} forecasts are constant; using intercept-only correction", stacklevel=2)
            a[m], b[m] = float(ym.mean()), 0.0
        else:
            b[m] = float(((xm - xm.mean()) @ (ym - ym.mean())) / (xm.size * var_x))
            a[m] = float(ym.mean() - b[m] * xm.mean())
        r = ym - a[m] - b[m] * xm
        ss_resid += float(r @ r)
        n_resid += r.size

    complete = obs_ok & ~np.isnan(F).any(axis=2)
    y = Y[complete]
    if y.size == 0:
        raise ValueError("no complete cases (observation plus all members) for EM")
    mu = a + b * F[complete]             # (n, M)

    w = np.full(M, 1.0 / M)
    sigma2 = max(ss_resid / max(n_resid, 1), VARIANCE_FLOOR)
    resid2 = (y[:, None] - mu) ** 2
    loglik_prev = -np.inf
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iter + 1):
        log_comp = np.log(np.maximum(w, 1e-300)) - 0.5 * resid2 / sigma2 - 0.5 * math.log(sigma2) - _LOG_SQRT_2PI
        log_norm = logsumexp(log_comp, axis=1)
        loglik = float(log_norm.sum())
        if loglik < loglik_prev - 1e-8:
            raise RuntimeError(f"EM log-likelihood decreased: {loglik_prev} -> {loglik}")
        if loglik - loglik_prev < em_tol:
            loglik_prev = loglik
            converged = True
            break
        loglik_prev = loglik
        resp = np.exp(log_comp - log_norm[:, None])
        w = resp.mean(axis=0)
        w = np.clip(w, 0.0, None)
        w /= w.sum()
        sigma2 = max(float((resp * resid2).sum() / y.size), VARIANCE_FLOOR)
    if not converged:
        warnings.warn(f"EM stopped after {max_iter} iterations without meeting tol {em_tol}", stacklevel=2)
    return BmaParams(a=a, b=b, w=w, sigma2=float(sigma2), n_iter=n_iter, converged=converged, loglik=loglik_prev)


def predict_bma(params: BmaParams, forecasts) -> MixturePredictive:
    """Mixture predictive from one station's member forecasts.

    Components of missing members are dropped and the remaining weights are
    renormalized.
    """
    f = np.asarray(forecasts, dtype=float).ravel()
    if f.size != params.members:
        raise ValueError(f"{f.size} member values for {params.members} members")
    avail = ~np.isnan(f)
    if not avail.any():
        raise ValueError("no member forecasts available")
    w = params.w[avail]
    total = w.sum()
    if total <= 0:
        raise ValueError("available members carry zero total weight")
    means = params.a[avail] + params.b[avail] * f[avail]
    return MixturePredictive(w / total, means, np.full(means.size, params.sigma2))


def fit_spatial_bma(
    data: EnsembleDataset,
    window: TrainingWindow,
    bma: BmaParams,
    n_bins: int = 20,
) -> SpatialBmaParams:
    """Per-member error-correlation fits on standardized member residuals.

    Member m's residual panel is (y - a_m - b_m f_m) / sigma over the window.
    Members whose panel cannot support a fit fall back to a variogram fitted
    on the residuals of all members pooled, with a warning.
    """
    F, Y = _member_rows(data, window)
    if bma.members != data.members:
        raise ValueError("parameter member count does not match the dataset")
    sigma = math.sqrt(bma.sigma2)
    stations = data.stations
    r_max = stations.max_distance()
    days = window.training_days

    panels = []
    for m in range(bma.members):
        values = (Y - bma.a[m] - bma.b[m] * F[:, :, m]) / sigma
        panels.append(StandardizedErrorPanel(days, stations.ids, values))

    pooled_fit = None

    def pooled() -> VariogramFit:
        nonlocal pooled_fit
        if pooled_fit is None:
            stacked = np.concatenate([p.values for p in panels], axis=0)
            labels = tuple(f"{d}/m{m + 1}" for m in range(bma.members) for d in days)
            panel = StandardizedErrorPanel(labels, stations.ids, stacked)
            pooled_fit = fit_variogram(empirical_variogram(panel, stations, n_bins), r_max=r_max)
        return pooled_fit

    fits = []
    for m in range(bma.members):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                fit = fit_variogram(empirical_variogram(panels[m], stations, n_bins), r_max=r_max)
        except Exception:
            warnings.warn(f"member {m + 1} residual variogram degenerate; using pooled fit", stacklevel=2)
            fit = pooled()
        fits.append(fit)
    return SpatialBmaParams(bma=bma, variograms=tuple(fits))


def sample_spatial_bma(
    params: SpatialBmaParams,
    forecasts: np.ndarray,
    stations: StationSet,
    n_samples: int,
    rng: np.random.Generator,
    *,
    seed: Optional[int] = None,
) -> ForecastFieldSample:
    """Whole-field mixture sampling.

    Each sample draws one member by weight, then a field equal to that
    member's bias-corrected forecast plus sigma times a correlated standard
    error field from the member's fitted correlation model. Missing member
    forecasts are imputed by the station's available-member mean.
    """
    if n_samples < 0:
        raise ValueError("n_samples must be non-negative")
    f = np.array(forecasts, dtype=float)
    if f.shape != (len(stations), params.bma.members):
        raise ValueError(f"forecasts shape {f.shape} does not match (n_stations, members)")
    missing = np.isnan(f)
    if missing.any():
        row_mean = np.nanmean(np.where(missing, np.nan, f), axis=1)
        if np.isnan(row_mean).any():
            raise ValueError("station with no member forecasts at all")
        f = np.where(missing, row_mean[:, None], f)

    bma = params.bma
    sigma = math.sqrt(bma.sigma2)
    comp = rng.choice(bma.members, size=n_samples, p=bma.w / bma.w.sum())
    fields = np.empty((n_samples, len(stations)))
    for m in np.unique(comp):
        rows = np.nonzero(comp == m)[0]
        corr = build_correlation_matrix(params.variograms[m], stations)
        L, _ = cholesky_with_jitter(corr)
        z = rng.standard_normal((len(stations), rows.size))
        mu_field = bma.a[m] + bma.b[m] * f[:, m]
        fields[rows] = (mu_field[:, None] + sigma * (L @ z)).T
    return ForecastFieldSample(stations.ids, fields, "spatial-bma", seed)


# ---------------------------------------------------------------------------
# vectorized mixture helpers used by the experiment driver


def mixture_cdf_rows(w: np.ndarray, means: np.ndarray, sigma: float, x: np.ndarray) -> np.ndarray:
    """Mixture CDF evaluated row-wise: means (n, M), x (n,)."""
    from scipy.special import ndtr

    z = (x[:, None] - means) / sigma
    return ndtr(z) @ w


def mixture_quantile_rows(w: np.ndarray, means: np.ndarray, sigma: float, p: float) -> np.ndarray:
    """Row-wise mixture quantiles by vectorized bisection to 1e-10."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile requires 0 < p < 1")
    lo = means.min(axis=1) - 12.0 * sigma
    hi = means.max(axis=1) + 12.0 * sigma
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = mixture_cdf_rows(w, means, sigma, mid) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) <= 1e-10:
            break
    return 0.5 * (lo + hi)


def params_to_json(params: BmaParams, target_day: str, window_days: Sequence[str] = ()) -> dict:
    """JSON-serializable record of a mixture fit."""
    return {
        "method": "bma",
        "target_day": str(target_day),
        "window_days": [str(d) for d in window_days],
        "a": [float(v) for v in params.a],
        "b": [float(v) for v in params.b],
        "w": [float(v) for v in params.w],
        "sigma2": float(params.sigma2),
        "n_iter": int(params.n_iter),
        "converged": bool(params.converged),
        "loglik": float(params.loglik),
    }


def params_from_json(doc: dict) -> BmaParams:
    if doc.get("method") != "bma":
        raise ValueError(f"not a mixture parameter record: method {doc.get('method')!r}")
    return BmaParams(
        a=np.asarray(doc["a"], dtype=float),
        b=np.asarray(doc["b"], dtype=float),
        w=np.asarray(doc["w"], dtype=float),
        sigma2=float(doc["sigma2"]),
        n_iter=int(doc.get("n_iter", 0)),
        converged=bool(doc.get("converged", True)),
        loglik=float(doc.get("loglik", float("nan"))),
    )
