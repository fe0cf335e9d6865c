"""Rate-control evaluation quantities."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricRecord:
    delta_r: float
    q_f: float
    fluctuation_ratio: float
    t_rc: float
    invocation_ratio: float

    def __post_init__(self):
        if self.delta_r < 0 or self.q_f < 0:
            raise ValueError("delta_r and q_f must be non-negative")

    def as_row(self) -> dict:
        return asdict(self)


def rate_error(actual_total, target_total) -> float:
    """Relative bitrate error ``|actual - target| / target``."""
    if target_total <= 0:
        raise ValueError("target must be positive")
    return abs(actual_total - target_total) / target_total


def quality_fluctuation(mses) -> float:
    """Mean absolute deviation of the MSE series divided by its mean."""
    x = np.asarray(mses, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty MSE series")
    mu = x.mean()
    if mu <= 0:
        raise ValueError("MSE series must have a positive mean")
    return float(np.mean(np.abs(x - mu)) / mu)


def fluctuation_ratio(controlled, fixed_lambda) -> float:
    denom = quality_fluctuation(fixed_lambda)
    if denom == 0:
        raise ZeroDivisionError("fixed-lambda series has zero fluctuation; ratio undefined")
    return quality_fluctuation(controlled) / denom


def t_rc(control_time, encode_time) -> float:
    if encode_time <= 0:
        raise ValueError("encode time must be positive")
    return control_time / encode_time


def invocation_ratio(control_calls, encode_calls) -> float:
    """Control-path codec calls per real encode."""
    if encode_calls <= 0:
        raise ValueError("encode call count must be positive")
    return control_calls / encode_calls


def sequence_rate_error(reports) -> float:
    """Rate error of the whole run, after buffer carry-over."""
    actual = sum(r.total_bpp for r in reports)
    target = sum(r.target for r in reports)
    return rate_error(actual, target)


def summarize(reports, fixed_mses=None) -> MetricRecord:
    """Aggregate a list of mini-GOP reports.

    ``fixed_mses`` is the fixed-lambda MSE series matched to the first
    mini-GOP; without it the fluctuation ratio is NaN.
    """
    dr = float(np.mean([r.delta_r for r in reports]))
    qf = quality_fluctuation(reports[0].mses)
    ratio = float("nan")
    if fixed_mses is not None:
        ratio = fluctuation_ratio(reports[0].mses, fixed_mses)
    pred = sum(r.predict_time for r in reports)
    enc = sum(r.encode_time for r in reports)
    ctrl = sum(r.control_invocations for r in reports)
    encs = sum(r.encode_invocations for r in reports)
    return MetricRecord(
        delta_r=dr,
        q_f=qf,
        fluctuation_ratio=ratio,
        t_rc=t_rc(pred, enc) if enc > 0 else float("nan"),
        invocation_ratio=invocation_ratio(ctrl, encs),
    )
