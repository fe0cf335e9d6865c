"""Per-frame R-lambda / D-lambda sample prediction without encoding."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.isotonic import isotonic_regression
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import CalibrationError
from .frameio import Frame, FramePair, mean_gradient
from .rdmodel import FrameModelSet

TARGET_HEIGHT = 240


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size < 2:
            raise ValueError("a lambda grid needs at least two values")
        if np.any(v <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("lambda grid must be positive and strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    def __eq__(self, other):
        return isinstance(other, LambdaGrid) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    @property
    def lambda_min(self) -> float:
        return float(self.values[0])

    @property
    def lambda_max(self) -> float:
        return float(self.values[-1])


def make_grid(lambda_min, lambda_max, m=8) -> LambdaGrid:
    """``m`` exponentially spaced lambdas from ``lambda_min`` to ``lambda_max`` inclusive."""
    if not (0 < lambda_min < lambda_max):
        raise ValueError(f"need 0 < lambda_min < lambda_max, got {lambda_min}, {lambda_max}")
    if m < 2:
        raise ValueError("grid size m must be >= 2")
    i = np.arange(m) / (m - 1)
    values = lambda_min * (lambda_max / lambda_min) ** i
    values[0], values[-1] = lambda_min, lambda_max
    return LambdaGrid(values)


def repair_monotone(bpp, mse):
    """Pool-adjacent-violators repair: bpp non-decreasing, mse non-increasing."""
    bpp = isotonic_regression(np.asarray(bpp, dtype=np.float64), increasing=True)
    mse = isotonic_regression(np.asarray(mse, dtype=np.float64), increasing=False)
    return bpp, mse


@dataclass(frozen=True, eq=False)
class RDSampleSet:
    """Predicted or measured (bpp, mse) at every grid lambda.

    Construction applies :func:`repair_monotone` unless ``repair=False``,
    which is only meant for holding raw measurements to compare against.
    """

    grid: LambdaGrid
    bpp: np.ndarray
    mse: np.ndarray
    repair: bool = True

    def __post_init__(self):
        bpp = np.asarray(self.bpp, dtype=np.float64).reshape(-1)
        mse = np.asarray(self.mse, dtype=np.float64).reshape(-1)
        m = len(self.grid)
        if bpp.size != m or mse.size != m:
            raise ValueError(f"expected {m} samples, got bpp={bpp.size}, mse={mse.size}")
        if not (np.all(np.isfinite(bpp)) and np.all(np.isfinite(mse))):
            raise ValueError("samples must be finite")
        if np.any(bpp <= 0) or np.any(mse <= 0):
            raise ValueError("samples must be strictly positive")
        if self.repair:
            bpp, mse = repair_monotone(bpp, mse)
        bpp.setflags(write=False)
        mse.setflags(write=False)
        object.__setattr__(self, "bpp", bpp)
        object.__setattr__(self, "mse", mse)

    @property
    def extremes(self):
        """``(d_max, d_min)`` of the predicted distortion."""
        return float(self.mse.max()), float(self.mse.min())

    def to_models(self) -> FrameModelSet:
        return FrameModelSet.from_samples(self.grid.values, self.bpp, self.mse)


def prediction_mae(predicted: RDSampleSet, actual: RDSampleSet):
    """Mean absolute bpp and mse errors over the grid, ``(l_r, l_d)``."""
    if predicted.grid != actual.grid:
        raise ValueError("sample sets use different lambda grids")
    l_r = float(np.mean(np.abs(predicted.bpp - actual.bpp)))
    l_d = float(np.mean(np.abs(predicted.mse - actual.mse)))
    return l_r, l_d


def _area_matrix(n_in, n_out):
    scale = n_in / n_out
    lo = np.arange(n_out)[:, None] * scale
    hi = lo + scale
    i = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, i + 1) - np.maximum(lo, i), 0.0, None)
    return overlap / scale


def downsample_240p(frame: Frame) -> Frame:
    """Area-average resample to 240 lines; width keeps the aspect and is made even."""
    h, w = frame.shape
    if h <= TARGET_HEIGHT:
        return frame
    out_w = max(2, 2 * int(round(w * TARGET_HEIGHT / h / 2)))
    rows = _area_matrix(h, TARGET_HEIGHT)
    cols = _area_matrix(w, out_w)
    out = rows @ frame.luma @ cols.T
    return Frame(np.clip(out, 0.0, 1.0))


def addition_variance(d_max, d_min) -> float:
    """Squared scale of the distortion-addition field: ``ln((e^dmax + e^dmin) / 2)``."""
    # logaddexp keeps this exact for equal endpoints and safe for large inputs
    return float(np.logaddexp(d_max, d_min) - math.log(2.0))


def addition_scale(d_max, d_min) -> float:
    return math.sqrt(max(addition_variance(d_max, d_min), 0.0))


def distortion_addition(reference: Frame, prev_d_max, prev_d_min, seed=0) -> Frame:
    """Perturb an uncompressed reference with Gaussian noise sized by predicted distortion.

    Distortions are normalized MSE values; the result is clamped to [0, 1].
    """
    if not (0 < prev_d_min <= prev_d_max <= 1):
        raise ValueError(
            f"need 0 < d_min <= d_max <= 1, got d_min={prev_d_min}, d_max={prev_d_max}"
        )
    s = addition_scale(prev_d_max, prev_d_min)
    t = np.random.default_rng(seed).standard_normal(reference.shape)
    return Frame(np.clip(reference.luma + s * t, 0.0, 1.0))


FEATURE_NAMES = ("temporal_mad", "spatial_grad", "log_downsample_ratio")
TARGET_NAMES = ("ln_alpha1", "beta1", "ln_alpha2", "beta2")


@dataclass(frozen=True)
class FeatureVector:
    temporal_mad: float
    spatial_grad: float
    log_downsample_ratio: float

    def __post_init__(self):
        for name in FEATURE_NAMES:
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"feature {name} must be finite and >= 0, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.temporal_mad, self.spatial_grad, self.log_downsample_ratio])


def extract_features(pair: FramePair) -> FeatureVector:
    ref = downsample_240p(pair.reference)
    cur = downsample_240p(pair.current)
    ratio = (pair.current.width * pair.current.height) / (cur.width * cur.height)
    return FeatureVector(
        temporal_mad=float(np.mean(np.abs(cur.luma - ref.luma))),
        spatial_grad=float(mean_gradient(cur.luma)),
        log_downsample_ratio=max(0.0, math.log(ratio)),
    )


def _params_to_targets(models: FrameModelSet):
    return [
        math.log(models.r_lambda.alpha),
        models.r_lambda.beta,
        math.log(models.d_lambda.alpha),
        models.d_lambda.beta,
    ]


class FeatureRDPredictor(RegressorMixin, BaseEstimator):
    """Linear map from frame-pair features to log-domain power-law parameters.

    ``fit`` takes ``X`` of shape ``(n, 3)`` (see ``FEATURE_NAMES``) and
    ``Y`` of shape ``(n, 4)``: ``ln alpha1, beta1, ln alpha2, beta2``.
    Feature columns that are constant over the training set get a zero
    coefficient; if none vary, or the varying ones are collinear, the fit
    raises :class:`CalibrationError`.

    Predicted exponents are held at least ``min_abs_beta`` away from zero so
    the resulting models stay invertible.
    """

    def __init__(self, min_abs_beta=0.05):
        self.min_abs_beta = min_abs_beta

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y row counts differ")
        if X.shape[1] != len(FEATURE_NAMES) or Y.shape[1] != len(TARGET_NAMES):
            raise ValueError(f"expected X (n, 3) and Y (n, 4), got {X.shape}, {Y.shape}")
        if X.shape[0] < 8:
            raise CalibrationError(f"need at least 8 training rows, got {X.shape[0]}")
        spread = X.max(axis=0) - X.min(axis=0)
        active = spread > 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
        if not active.any():
            raise CalibrationError("all feature columns are constant")
        design = np.column_stack([np.ones(X.shape[0]), X[:, active]])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise CalibrationError("feature matrix is rank deficient")
        sol, *_ = np.linalg.lstsq(design, Y, rcond=None)
        coef = np.zeros((Y.shape[1], X.shape[1]))
        coef[:, active] = sol[1:].T
        self.coef_ = coef
        self.intercept_ = sol[0].copy()
        self.active_features_ = active
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_.T + self.intercept_

    def predict_params(self, features: FeatureVector):
        la1, b1, la2, b2 = self.predict(features.as_array()[None, :])[0]
        b1 = max(b1, self.min_abs_beta)
        b2 = min(b2, -self.min_abs_beta)
        return la1, b1, la2, b2

    def predict_samples(self, pair: FramePair, grid: LambdaGrid) -> RDSampleSet:
        la1, b1, la2, b2 = self.predict_params(extract_features(pair))
        lam = grid.values
        return RDSampleSet(grid, np.exp(la1) * lam**b1, np.exp(la2) * lam**b2)

    def predict_frame(self, frame_index, ref_extremes, grid, frames=None, seed=0):
        """Samples for ``frames[frame_index]`` against its (distorted) predecessor."""
        if frames is None:
            raise ValueError("the feature predictor needs pixel frames")
        cur = frames[frame_index]
        ref = frames[frame_index - 1] if frame_index > 0 else cur
        if ref_extremes is not None:
            # the addition field is defined on normalized MSE <= 1
            d_max = min(ref_extremes[0], 1.0)
            d_min = min(ref_extremes[1], d_max)
            ref = distortion_addition(ref, d_max, d_min, seed)
        return self.predict_samples(FramePair(ref, cur), grid)

    def to_record(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "features": list(FEATURE_NAMES),
            "targets": list(TARGET_NAMES),
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_.tolist(),
            "min_abs_beta": self.min_abs_beta,
        }

    @classmethod
    def from_record(cls, rec) -> "FeatureRDPredictor":
        est = cls(min_abs_beta=rec.get("min_abs_beta", 0.05))
        est.coef_ = np.asarray(rec["coef"], dtype=np.float64)
        est.intercept_ = np.asarray(rec["intercept"], dtype=np.float64)
        est.active_features_ = np.any(est.coef_ != 0, axis=0)
        est.n_features_in_ = est.coef_.shape[1]
        return est

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_record(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureRDPredictor":
        return cls.from_record(json.loads(Path(path).read_text()))


def calibrate_feature_predictor(training_pairs, min_abs_beta=0.05) -> FeatureRDPredictor:
    """Fit a :class:`FeatureRDPredictor` from ``(FeatureVector, FrameModelSet)`` pairs."""
    training_pairs = list(training_pairs)
    if len(training_pairs) < 8:
        raise CalibrationError(f"need at least 8 training pairs, got {len(training_pairs)}")
    X = np.array([fv.as_array() for fv, _ in training_pairs])
    Y = np.array([_params_to_targets(m) for _, m in training_pairs])
    return FeatureRDPredictor(min_abs_beta=min_abs_beta).fit(X, Y)


def oracle_predict(codec, frame_index, ref_quality, grid: LambdaGrid) -> RDSampleSet:
    """Noiseless ground-truth samples from a virtual codec; no encode is counted."""
    return codec.ground_truth_samples(frame_index, ref_quality, grid)


class OraclePredictor:
    """Predictor backed by the virtual codec's ground truth.

    The reference quality the codec will see is not known before encoding, so
    it is estimated from the previous frame's predicted distortion extremes,
    the same quantity that sizes the distortion-addition field.
    """

    def __init__(self, codec):
        self.codec = codec

    def predict_frame(self, frame_index, ref_extremes, grid, frames=None, seed=0):
        ref_quality = 0.0 if ref_extremes is None else addition_variance(*ref_extremes)
        return oracle_predict(self.codec, frame_index, ref_quality, grid)
