"""Lambda-domain bit allocation over a mini-GOP and the buffered encode loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InfeasibleBracketError
from .predictor import make_grid
from .rdmodel import evaluate, invert, rate_of_distortion

log = logging.getLogger(__name__)


class Feasibility(str, Enum):
    IN_RANGE = "InRange"
    ABOVE_MAX = "AboveMax"
    BELOW_MIN = "BelowMin"


class Clamp(str, Enum):
    IN_RANGE = "InRange"
    CLAMPED_HIGH = "ClampedHigh"
    CLAMPED_LOW = "ClampedLow"


@dataclass(frozen=True)
class AllocatorConfig:
    max_iters: int = 100
    tolerance: float = 0.01
    minigop_size: int = 4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.tolerance < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.minigop_size < 1:
            raise ValueError("minigop_size must be >= 1")


@dataclass
class AllocationPlan:
    d_tar: float
    frame_rates: list
    ratios: list
    lambdas: list
    clamp: Clamp
    iterations_used: int
    converged: bool = True


@dataclass
class BufferState:
    bits: float = 0.0


@dataclass
class FrameRecord:
    frame_index: int
    lam: float
    budget: float
    actual_bpp: float
    actual_mse: float
    buffer_after: float
    clamp: str = "none"  # per-frame lambda clamp: none / high / low


@dataclass
class EncodeReport:
    target: float
    buffer_in: float
    records: list = field(default_factory=list)
    method: str = "ours"
    minigop_index: int = 0
    plan: AllocationPlan | None = None
    control_invocations: int = 0
    encode_invocations: int = 0
    predict_time: float = 0.0
    encode_time: float = 0.0

    @property
    def clamp(self) -> Clamp:
        return self.plan.clamp if self.plan is not None else Clamp.IN_RANGE

    @property
    def buffer_out(self) -> float:
        return self.records[-1].buffer_after if self.records else self.buffer_in

    @property
    def total_bpp(self) -> float:
        return float(sum(r.actual_bpp for r in self.records))

    @property
    def budgets(self):
        return [r.budget for r in self.records]

    @property
    def mses(self):
        return [r.actual_mse for r in self.records]

    @property
    def lambdas(self):
        return [r.lam for r in self.records]

    @property
    def delta_r(self) -> float:
        return abs(self.total_bpp - self.target) / self.target


def feasibility(models, r_tar) -> Feasibility:
    if r_tar > sum(m.r_max for m in models):
        return Feasibility.ABOVE_MAX
    if r_tar < sum(m.r_min for m in models):
        return Feasibility.BELOW_MIN
    return Feasibility.IN_RANGE


def _total_rate(models, d):
    rates = [rate_of_distortion(m.rd, d) for m in models]
    return rates, float(sum(rates))


def search_target_distortion(models, r_tar, cfg: AllocatorConfig = AllocatorConfig()):
    """Bisect the shared target distortion until the summed rate meets ``r_tar``.

    Returns ``(d_tar, frame_rates, iterations_used, converged)``. When the
    iteration cap is hit first, the midpoint with the smallest rate error is
    returned and ``converged`` is False.
    """
    d_lb = max(m.d_min for m in models)
    d_ub = min(m.d_max for m in models)
    if not d_lb < d_ub:
        raise InfeasibleBracketError(
            f"distortion bracket is empty: D_LB={d_lb:.6g} >= D_UB={d_ub:.6g}"
        )
    best = None
    for it in range(1, cfg.max_iters + 1):
        d_tar = 0.5 * (d_lb + d_ub)
        rates, total = _total_rate(models, d_tar)
        err = abs(total - r_tar) / r_tar
        if best is None or err < best[0]:
            best = (err, d_tar, rates, it)
        if err < cfg.tolerance:
            return d_tar, rates, it, True
        if total < r_tar:
            d_ub = d_tar
        else:
            d_lb = d_tar
    _, d_tar, rates, _ = best
    return d_tar, rates, cfg.max_iters, False


def fit_rates_to_ranges(frame_rates, r_tar, r_min, r_max):
    """Scale planned rates by one common factor, clipped per frame, to sum to ``r_tar``.

    The clipped sum is monotone in the factor, so it is found by bisection in
    the log domain. Requires ``sum(r_min) <= r_tar <= sum(r_max)``.
    """
    rates = np.asarray(frame_rates, dtype=np.float64)
    lo = np.asarray(r_min, dtype=np.float64)
    hi = np.asarray(r_max, dtype=np.float64)

    def total(log_t):
        return np.clip(rates * np.exp(log_t), lo, hi).sum()

    a = float(np.log(np.min(lo / rates)))
    b = float(np.log(np.max(hi / rates)))
    if abs(rates.sum() - r_tar) <= 1e-12 * r_tar and np.all((rates >= lo) & (rates <= hi)):
        return list(rates)
    for _ in range(200):
        mid = 0.5 * (a + b)
        if total(mid) < r_tar:
            a = mid
        else:
            b = mid
        if b - a < 1e-15:
            break
    return list(np.clip(rates * np.exp(0.5 * (a + b)), lo, hi))


def derive_ratios(frame_rates):
    rates = np.asarray(frame_rates, dtype=np.float64)
    if rates.size == 0 or np.any(rates <= 0):
        raise ValueError("frame rates must be positive")
    return list(rates / rates.sum())


def frame_budget(ratio, ratio_sum, r_tar, buffer: BufferState) -> float:
    return r_tar * ratio / ratio_sum + buffer.bits


def _clamp_lambda(lam, lambda_min, lambda_max):
    if lam > lambda_max:
        return lambda_max, "high"
    if lam < lambda_min:
        return lambda_min, "low"
    return lam, "none"


def _lambda_for_budget(model, budget, lambda_min, lambda_max):
    if budget <= 0:
        return lambda_min, "low"
    return _clamp_lambda(invert(model, budget), lambda_min, lambda_max)


def plan_minigop(models, r_tar, lambda_min, lambda_max, cfg=AllocatorConfig(), allocation="lambda"):
    """Allocation for one mini-GOP before any encoding.

    ``allocation="uniform"`` skips the distortion search and splits the
    target equally; it is used by the equal-bit baselines.
    """
    if r_tar <= 0:
        raise ValueError("target rate must be positive")
    n = len(models)
    status = feasibility(models, r_tar)
    if status is Feasibility.ABOVE_MAX:
        return AllocationPlan(
            float("nan"), [m.r_max for m in models], [1.0 / n] * n, [lambda_max] * n,
            Clamp.CLAMPED_HIGH, 0,
        )
    if status is Feasibility.BELOW_MIN:
        return AllocationPlan(
            float("nan"), [m.r_min for m in models], [1.0 / n] * n, [lambda_min] * n,
            Clamp.CLAMPED_LOW, 0,
        )
    if allocation == "uniform":
        rates, d_tar, iters, ok = [r_tar / n] * n, float("nan"), 0, True
    elif allocation == "lambda":
        d_tar, rates, iters, ok = search_target_distortion(models, r_tar, cfg)
        if not ok:
            log.info("bisection hit max_iters=%d without meeting tolerance", cfg.max_iters)
    else:
        raise ValueError(f"unknown allocation {allocation!r}")
    if allocation == "lambda":
        rates = fit_rates_to_ranges(
            rates, r_tar, [m.r_min for m in models], [m.r_max for m in models]
        )
    ratios = derive_ratios(rates)
    ratio_sum = sum(ratios)
    lambdas = [
        _lambda_for_budget(m.r_lambda, r_tar * r / ratio_sum, lambda_min, lambda_max)[0]
        for m, r in zip(models, ratios)
    ]
    return AllocationPlan(d_tar, list(rates), ratios, lambdas, Clamp.IN_RANGE, iters, ok)


def run_minigop(
    models,
    r_tar,
    codec,
    start_index,
    ref_mse=0.0,
    cfg=AllocatorConfig(),
    buffer: BufferState | None = None,
    allocation="lambda",
    method="ours",
) -> EncodeReport:
    """Plan and encode one mini-GOP.

    Each frame's budget is its share of ``r_tar`` plus whatever the buffer
    holds; after encoding the buffer holds ``budget - actual``. Clamped plans
    encode every frame at the range edge but keep the same buffer accounting,
    so ``sum(actual) == r_tar + buffer_in - buffer_out`` always holds.
    """
    buffer = BufferState() if buffer is None else buffer
    plan = plan_minigop(models, r_tar, codec.lambda_min, codec.lambda_max, cfg, allocation)
    report = EncodeReport(r_tar, buffer.bits, method=method, plan=plan)
    ratio_sum = sum(plan.ratios)
    calls0 = codec.invocation_count
    t0 = time.perf_counter()
    for i, (m, ratio) in enumerate(zip(models, plan.ratios)):
        budget = frame_budget(ratio, ratio_sum, r_tar, buffer)
        if plan.clamp is Clamp.CLAMPED_HIGH:
            lam, flag = codec.lambda_max, "high"
        elif plan.clamp is Clamp.CLAMPED_LOW:
            lam, flag = codec.lambda_min, "low"
        else:
            lam, flag = _lambda_for_budget(m.r_lambda, budget, codec.lambda_min, codec.lambda_max)
        bpp, mse = codec.encode_frame(start_index + i, lam, ref_mse)
        buffer.bits = budget - bpp
        ref_mse = mse
        report.records.append(FrameRecord(start_index + i, lam, budget, bpp, mse, buffer.bits, flag))
    report.encode_time = time.perf_counter() - t0
    report.encode_invocations = codec.invocation_count - calls0
    return report


# planned distortions this close between passes count as a fixed point
_REFINE_RTOL = 1e-9


def minigop_bounds(n_frames, minigop_size):
    """Consecutive ``(start, stop)`` spans; the last one may be shorter."""
    return [(s, min(s + minigop_size, n_frames)) for s in range(0, n_frames, minigop_size)]


def _frame_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def predict_minigop(predictor, start, stop, grid, last_mse, frames=None, seed=0, ref_plan=None):
    """Predicted sample sets for frames ``start..stop-1``.

    The first frame's reference quality is the last reconstructed MSE
    (``None`` at the start of a sequence). Each later frame uses the
    previous frame's predicted distortion extremes, or, when ``ref_plan``
    gives planned per-frame distortions, the previous frame's planned value
    as both extremes.
    """
    samples = []
    ref = None if last_mse is None else (last_mse, last_mse)
    for j, idx in enumerate(range(start, stop)):
        s = predictor.predict_frame(idx, ref, grid, frames=frames, seed=_frame_seed(seed, idx))
        samples.append(s)
        ref = s.extremes if ref_plan is None else (ref_plan[j], ref_plan[j])
    return samples


def planned_distortions(models, plan):
    """Distortion each frame is expected to reach at its planned lambda."""
    return [float(evaluate(m.d_lambda, lam)) for m, lam in zip(models, plan.lambdas)]


def run_sequence(
    predictor,
    codec,
    r_tar_per_minigop,
    cfg=AllocatorConfig(),
    frames=None,
    n_frames=None,
    seed=0,
    grid=None,
    buffer_policy="persist",
    method="ours",
    ref_refinement=8,
):
    """Closed-loop rate control over a whole sequence, one report per mini-GOP.

    ``r_tar_per_minigop`` is either one total-bpp target used for every
    mini-GOP or a list with one target per mini-GOP.

    Up to ``ref_refinement`` extra prediction passes re-estimate each
    reference's quality from the previous pass's plan, stopping early once the
    planned distortions settle; 0 keeps the single extremes-based pass.
    """
    if buffer_policy not in ("persist", "reset"):
        raise ValueError(f"unknown buffer policy {buffer_policy!r}")
    if n_frames is None:
        n_frames = len(frames) if frames is not None else codec.n_frames
    if n_frames < cfg.minigop_size:
        raise ValueError(f"sequence of {n_frames} frames is shorter than one mini-GOP")
    grid = grid or make_grid(codec.lambda_min, codec.lambda_max, 8)
    spans = minigop_bounds(n_frames, cfg.minigop_size)
    targets = np.broadcast_to(np.asarray(r_tar_per_minigop, dtype=np.float64), (len(spans),))

    buffer = BufferState()
    last_mse = None
    reports = []
    for k, ((start, stop), r_tar) in enumerate(zip(spans, targets)):
        if buffer_policy == "reset":
            buffer = BufferState()
        calls0 = codec.invocation_count
        t0 = time.perf_counter()
        samples = predict_minigop(predictor, start, stop, grid, last_mse, frames, seed)
        models = [s.to_models() for s in samples]
        prev = None
        for _ in range(ref_refinement):
            plan = plan_minigop(models, float(r_tar), codec.lambda_min, codec.lambda_max, cfg)
            planned = np.array(planned_distortions(models, plan))
            if prev is not None and np.allclose(planned, prev, rtol=_REFINE_RTOL, atol=0.0):
                break
            samples = predict_minigop(predictor, start, stop, grid, last_mse, frames, seed,
                                      ref_plan=list(planned))
            models = [s.to_models() for s in samples]
            prev = planned
        predict_time = time.perf_counter() - t0
        control_calls = codec.invocation_count - calls0
        rep = run_minigop(
            models, float(r_tar), codec, start,
            ref_mse=0.0 if last_mse is None else last_mse,
            cfg=cfg, buffer=buffer, method=method,
        )
        rep.minigop_index = k
        rep.predict_time = predict_time
        rep.control_invocations = control_calls
        last_mse = rep.records[-1].actual_mse
        reports.append(rep)
    return reports


class LambdaRateController(BaseEstimator):
    """Estimator-style front end for the allocation loop.

    Hyper-parameters are plain constructor arguments so ``get_params`` /
    ``set_params`` / ``clone`` work; ``run`` drives a whole sequence.
    """

    def __init__(self, max_iters=100, tolerance=0.01, minigop_size=4,
                 buffer_policy="persist", grid_size=8, ref_refinement=8):
        self.max_iters = max_iters
        self.tolerance = tolerance
        self.minigop_size = minigop_size
        self.buffer_policy = buffer_policy
        self.grid_size = grid_size
        self.ref_refinement = ref_refinement

    @property
    def config(self) -> AllocatorConfig:
        return AllocatorConfig(self.max_iters, self.tolerance, self.minigop_size)

    def plan(self, models, r_tar, lambda_min, lambda_max) -> AllocationPlan:
        return plan_minigop(models, r_tar, lambda_min, lambda_max, self.config)

    def run(self, predictor, codec, r_tar_per_minigop, frames=None, seed=0):
        grid = make_grid(codec.lambda_min, codec.lambda_max, self.grid_size)
        self.reports_ = run_sequence(
            predictor, codec, r_tar_per_minigop, self.config, frames=frames,
            seed=seed, grid=grid, buffer_policy=self.buffer_policy,
            ref_refinement=self.ref_refinement,
        )
        return self.reports_
