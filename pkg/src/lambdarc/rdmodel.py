"""Power-law R-lambda / D-lambda models and the hyperbolic D(R) curve."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import FitError, ModelShapeError, NonInvertibleError

# exponents closer to zero than this are treated as degenerate
BETA_FLOOR = 1e-6


@dataclass(frozen=True)
class PowerLawModel:
    """``value = alpha * lam ** beta``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not math.isfinite(self.beta):
            raise ValueError(f"beta must be finite, got {self.beta}")

    def __call__(self, lam):
        return evaluate(self, lam)

    def to_record(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_record(cls, rec) -> "PowerLawModel":
        if isinstance(rec, str):
            rec = json.loads(rec)
        return cls(float(rec["alpha"]), float(rec["beta"]))


@dataclass(frozen=True)
class RDCurve:
    """``D = c * R ** -k``."""

    c: float
    k: float

    def __post_init__(self):
        if not (self.c > 0 and self.k > 0):
            raise ModelShapeError(f"RD curve needs c > 0 and k > 0, got c={self.c}, k={self.k}")

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec) -> "RDCurve":
        if isinstance(rec, str):
            rec = json.loads(rec)
        return cls(float(rec["c"]), float(rec["k"]))


def fit_power_law(samples, min_count: int = 2) -> PowerLawModel:
    """OLS fit of ``ln(value) = ln(alpha) + beta * ln(lam)``.

    ``samples`` is an iterable of ``(lam, value)`` pairs.
    """
    pts = np.asarray(list(samples), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < max(min_count, 2) or pts.shape[1] != 2:
        raise FitError(f"need at least {max(min_count, 2)} (lambda, value) samples")
    lam, val = pts[:, 0], pts[:, 1]
    if not np.all(np.isfinite(pts)) or np.any(lam <= 0) or np.any(val <= 0):
        raise FitError("lambda and value samples must be finite and strictly positive")
    x, y = np.log(lam), np.log(val)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300 or np.unique(lam).size < 2:
        raise FitError("lambda samples must not all be identical")
    beta = float(xc @ (y - y.mean())) / sxx
    ln_alpha = float(y.mean() - beta * x.mean())
    return PowerLawModel(math.exp(ln_alpha), beta)


def evaluate(model: PowerLawModel, lam):
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr <= 0):
        raise ValueError("lambda must be positive")
    out = model.alpha * lam_arr**model.beta
    return float(out) if out.ndim == 0 else out


def invert(model: PowerLawModel, value):
    """Lambda at which ``model`` reaches ``value``."""
    if model.beta == 0:
        raise NonInvertibleError("a model with beta == 0 has no inverse")
    v = np.asarray(value, dtype=np.float64)
    if np.any(v <= 0):
        raise ValueError("value must be positive")
    out = (v / model.alpha) ** (1.0 / model.beta)
    return float(out) if out.ndim == 0 else out


def derive_rd_curve(r: PowerLawModel, d: PowerLawModel) -> RDCurve:
    """Eliminate lambda between ``R = a1 lam^b1`` and ``D = a2 lam^b2``."""
    if not (r.beta > 0 and d.beta < 0):
        raise ModelShapeError(
            f"need rate exponent > 0 and distortion exponent < 0, got {r.beta}, {d.beta}"
        )
    k = -d.beta / r.beta
    c = d.alpha * r.alpha ** (-d.beta / r.beta)
    return RDCurve(c, k)


def rate_of_distortion(curve: RDCurve, d):
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("distortion must be positive")
    out = (curve.c / d) ** (1.0 / curve.k)
    return float(out) if out.ndim == 0 else out


def distortion_of_rate(curve: RDCurve, r):
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("rate must be positive")
    out = curve.c * r ** (-curve.k)
    return float(out) if out.ndim == 0 else out


def slope_lambda(curve: RDCurve, r):
    """Negative slope ``-dD/dR`` of the curve at rate ``r``."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("rate must be positive")
    out = curve.c * curve.k * r ** (-curve.k - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FrameModelSet:
    r_lambda: PowerLawModel
    d_lambda: PowerLawModel
    rd: RDCurve
    r_min: float
    r_max: float
    d_min: float
    d_max: float

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ModelShapeError(f"r_min {self.r_min} must be below r_max {self.r_max}")
        if not self.d_min < self.d_max:
            raise ModelShapeError(f"d_min {self.d_min} must be below d_max {self.d_max}")

    @classmethod
    def from_models(cls, r_lambda, d_lambda, lambda_min, lambda_max) -> "FrameModelSet":
        """Build a set whose rate/distortion bounds come from the models themselves."""
        return cls(
            r_lambda,
            d_lambda,
            derive_rd_curve(r_lambda, d_lambda),
            r_min=evaluate(r_lambda, lambda_min),
            r_max=evaluate(r_lambda, lambda_max),
            d_min=evaluate(d_lambda, lambda_max),
            d_max=evaluate(d_lambda, lambda_min),
        )

    @classmethod
    def from_samples(cls, lambdas, bpp, mse) -> "FrameModelSet":
        """Fit both power laws on a sample grid.

        Bounds are the sample extremes at the grid endpoints. A rate exponent
        below ``BETA_FLOOR`` is rejected; a distortion exponent above
        ``-BETA_FLOOR`` is clamped to it.
        """
        lambdas = np.asarray(lambdas, dtype=np.float64)
        bpp = np.asarray(bpp, dtype=np.float64)
        mse = np.asarray(mse, dtype=np.float64)
        r = fit_power_law(zip(lambdas, bpp))
        if r.beta < BETA_FLOOR:
            raise FitError(f"rate-lambda exponent {r.beta:.3g} is degenerate")
        d = fit_power_law(zip(lambdas, mse))
        if d.beta > -BETA_FLOOR:
            d = PowerLawModel(d.alpha, -BETA_FLOOR)
        lo, hi = int(np.argmin(lambdas)), int(np.argmax(lambdas))
        r_min, r_max = float(bpp[lo]), float(bpp[hi])
        d_min, d_max = float(mse[hi]), float(mse[lo])
        # flat sample ends (after monotone repair) fall back to the fitted curve
        if not r_min < r_max:
            r_min, r_max = evaluate(r, lambdas[lo]), evaluate(r, lambdas[hi])
        if not d_min < d_max:
            d_min, d_max = evaluate(d, lambdas[hi]), evaluate(d, lambdas[lo])
        return cls(r, d, derive_rd_curve(r, d), r_min, r_max, d_min, d_max)

    def to_record(self) -> dict:
        return {
            "r_lambda": self.r_lambda.to_record(),
            "d_lambda": self.d_lambda.to_record(),
            "rd": self.rd.to_record(),
            "r_min": self.r_min,
            "r_max": self.r_max,
            "d_min": self.d_min,
            "d_max": self.d_max,
        }


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_power_law`.

    ``X`` holds lambda values (one column), ``y`` the observed rate or
    distortion. After ``fit`` the model is available as ``model_``.
    """

    def __init__(self, min_count=2):
        self.min_count = min_count

    def fit(self, X, y):
        lam = check_array(X, ensure_2d=False, dtype=np.float64).reshape(-1)
        y = check_array(y, ensure_2d=False, dtype=np.float64).reshape(-1)
        if lam.shape != y.shape:
            raise ValueError(f"X has {lam.size} samples but y has {y.size}")
        self.model_ = fit_power_law(zip(lam, y), self.min_count)
        self.alpha_, self.beta_ = self.model_.alpha, self.model_.beta
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        lam = check_array(X, ensure_2d=False, dtype=np.float64).reshape(-1)
        return np.asarray(evaluate(self.model_, lam)).reshape(-1)

    def inverse(self, values):
        check_is_fitted(self, "model_")
        v = check_array(values, ensure_2d=False, dtype=np.float64).reshape(-1)
        return np.asarray(invert(self.model_, v)).reshape(-1)
