"""Baselines (multi-pass, one-pass, fixed lambda) and the comparison harness."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocator import (
    AllocatorConfig,
    BufferState,
    Clamp,
    EncodeReport,
    FrameRecord,
    _lambda_for_budget,
    minigop_bounds,
    run_minigop,
    run_sequence,
)
from .codec_sim import ContentScript, VirtualCodec, generate_script, render_script_frames
from .frameio import FramePair, Sequence
from .metrics import fluctuation_ratio, quality_fluctuation, sequence_rate_error
from .predictor import (
    LambdaGrid,
    OraclePredictor,
    RDSampleSet,
    calibrate_feature_predictor,
    distortion_addition,
    extract_features,
    make_grid,
)
from . import svgplot
from .rdmodel import PowerLawModel

METHODS = ("ours", "multipass", "onepass", "fixed")
FRAME_COLUMNS = (
    "sequence_id", "minigop_index", "frame_index", "lambda", "budget_bpp",
    "actual_bpp", "actual_mse", "buffer_after", "clamp_flag",
)
MINIGOP_COLUMNS = (
    "method", "target_bpp", "minigop_index", "target_total", "actual_total",
    "delta_r", "buffer_in", "buffer_out", "clamp", "control_invocations",
    "encode_invocations", "q_f",
)
SUMMARY_COLUMNS = (
    "method", "target_bpp", "mean_delta_r", "inrange_mean_delta_r", "max_delta_r",
    "sequence_delta_r", "clamped_minigops", "control_invocations_per_minigop",
    "invocation_ratio", "mean_q_f", "q_f_ratio",
)
FLUCT_COLUMNS = ("method", "target_bpp", "position", "frame_index", "actual_bpp", "actual_mse")


@dataclass
class OnePassState:
    """Empirical R-lambda model with log-domain online updates.

    Stand-in for the classic HEVC-style one-pass scheme; the update moves
    ``ln alpha`` and ``beta`` toward each observed ``(lambda, bpp)`` point.
    """

    alpha: float = 0.2
    beta: float = 0.6
    delta_alpha: float = 0.1
    delta_beta: float = 0.05
    alpha_bounds: tuple = (1e-4, 10.0)
    beta_bounds: tuple = (0.05, 3.0)

    @property
    def model(self) -> PowerLawModel:
        return PowerLawModel(self.alpha, self.beta)

    def update(self, lam, bpp):
        err = math.log(bpp) - math.log(self.alpha * lam**self.beta)
        ln_alpha = math.log(self.alpha) + self.delta_alpha * err
        beta = self.beta + self.delta_beta * err * math.log(lam)
        self.alpha = float(np.clip(math.exp(ln_alpha), *self.alpha_bounds))
        self.beta = float(np.clip(beta, *self.beta_bounds))


def _targets(r_tar, n):
    return np.broadcast_to(np.asarray(r_tar, dtype=np.float64), (n,))


def multipass_models(codec, start, stop, grid: LambdaGrid, ref_mse):
    """Pre-encode each frame at every grid lambda and fit its models."""
    models = []
    for idx in range(start, stop):
        pts = [codec.encode_frame(idx, lam, ref_mse) for lam in grid.values]
        bpp, mse = zip(*pts)
        models.append(RDSampleSet(grid, bpp, mse).to_models())
    return models


def run_multipass(codec, grid, r_tar, cfg=AllocatorConfig(), n_frames=None,
                  allocation="lambda", buffer_policy="persist"):
    """Multi-pass control: ``M`` pre-encodes per frame, then allocation and a final encode."""
    n_frames = codec.n_frames if n_frames is None else n_frames
    spans = minigop_bounds(n_frames, cfg.minigop_size)
    buffer, ref_mse, reports = BufferState(), 0.0, []
    for k, ((start, stop), tgt) in enumerate(zip(spans, _targets(r_tar, len(spans)))):
        if buffer_policy == "reset":
            buffer = BufferState()
        calls0 = codec.invocation_count
        t0 = time.perf_counter()
        models = multipass_models(codec, start, stop, grid, ref_mse)
        control_time = time.perf_counter() - t0
        control_calls = codec.invocation_count - calls0
        rep = run_minigop(models, float(tgt), codec, start, ref_mse, cfg, buffer,
                          allocation=allocation, method="multipass")
        rep.minigop_index = k
        rep.predict_time = control_time
        rep.control_invocations = control_calls
        ref_mse = rep.records[-1].actual_mse
        reports.append(rep)
    return reports


def run_onepass(codec, r_tar, cfg=AllocatorConfig(), state=None, n_frames=None,
                buffer_policy="persist"):
    """Equal-split budgets, lambda from the running empirical model, one encode per frame."""
    state = OnePassState() if state is None else state
    n_frames = codec.n_frames if n_frames is None else n_frames
    spans = minigop_bounds(n_frames, cfg.minigop_size)
    buffer, ref_mse, reports = BufferState(), 0.0, []
    for k, ((start, stop), tgt) in enumerate(zip(spans, _targets(r_tar, len(spans)))):
        if buffer_policy == "reset":
            buffer = BufferState()
        tgt = float(tgt)
        n = stop - start
        rep = EncodeReport(tgt, buffer.bits, method="onepass", minigop_index=k)
        calls0 = codec.invocation_count
        t0 = time.perf_counter()
        for idx in range(start, stop):
            budget = tgt / n + buffer.bits
            lam, flag = _lambda_for_budget(state.model, budget, codec.lambda_min, codec.lambda_max)
            bpp, mse = codec.encode_frame(idx, lam, ref_mse)
            state.update(lam, bpp)
            buffer.bits = budget - bpp
            ref_mse = mse
            rep.records.append(FrameRecord(idx, lam, budget, bpp, mse, buffer.bits, flag))
        rep.encode_time = time.perf_counter() - t0
        rep.encode_invocations = codec.invocation_count - calls0
        reports.append(rep)
    return reports


def run_fixed_lambda(codec, lam, n_frames=None, minigop_size=4, start=0):
    """Constant-lambda anchor; each report's target is its own output."""
    if not codec.in_range(lam):
        raise ValueError(f"lambda {lam} outside codec range")
    n_frames = codec.n_frames - start if n_frames is None else n_frames
    ref_mse, reports = 0.0, []
    for k, (s, e) in enumerate(minigop_bounds(n_frames, minigop_size)):
        recs = []
        calls0 = codec.invocation_count
        for idx in range(start + s, start + e):
            bpp, mse = codec.encode_frame(idx, lam, ref_mse)
            ref_mse = mse
            recs.append(FrameRecord(idx, lam, bpp, bpp, mse, 0.0))
        total = sum(r.actual_bpp for r in recs)
        rep = EncodeReport(total, 0.0, recs, method="fixed", minigop_index=k)
        rep.encode_invocations = codec.invocation_count - calls0
        reports.append(rep)
    return reports


def anchor_lambda(codec, start, n, target_total):
    """Lambda whose noiseless fixed-lambda output over ``n`` frames equals ``target_total``."""

    def total(log_lam):
        lam, ref, acc = math.exp(log_lam), 0.0, 0.0
        for idx in range(start, start + n):
            bpp, ref = codec.expected(idx, lam, ref)
            acc += bpp
        return acc

    a, b = math.log(codec.lambda_min), math.log(codec.lambda_max)
    if total(a) >= target_total:
        return codec.lambda_min
    if total(b) <= target_total:
        return codec.lambda_max
    for _ in range(100):
        mid = 0.5 * (a + b)
        if total(mid) < target_total:
            a = mid
        else:
            b = mid
    return math.exp(0.5 * (a + b))


@dataclass
class ExperimentConfig:
    seed: int
    n_frames: int = 400
    n_scenes: int = 4
    drift: float = 0.05
    noise_sigma: float = 0.05
    coupling_gamma: float = 0.3
    lambda_min: float = 0.1
    lambda_max: float = 409.6
    m: int = 8
    minigop_size: int = 4
    max_iters: int = 100
    tolerance: float = 0.01
    targets: tuple = (0.15, 0.3, 0.6)
    predictor: str = "oracle"
    methods: tuple = METHODS
    multipass_allocation: str = "lambda"
    buffer_policy: str = "persist"
    fluctuation_scope: str = "first"
    ref_refinement: int = 8
    width: int = 416
    height: int = 240
    onepass: dict = field(default_factory=dict)

    def __post_init__(self):
        self.targets = tuple(float(t) for t in self.targets)
        self.methods = tuple(self.methods)
        if self.n_frames < self.minigop_size:
            raise ValueError("n_frames must cover at least one mini-GOP")
        if not 1 <= self.n_scenes <= self.n_frames:
            raise ValueError("n_scenes must lie in [1, n_frames]")
        if self.drift < 0 or self.noise_sigma < 0 or self.coupling_gamma < 0:
            raise ValueError("drift, noise_sigma and coupling_gamma must be >= 0")
        if not 0 < self.lambda_min < self.lambda_max:
            raise ValueError("need 0 < lambda_min < lambda_max")
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if not self.targets or min(self.targets) <= 0:
            raise ValueError("targets must be positive bpp values")
        if self.predictor not in ("oracle", "feature"):
            raise ValueError(f"unknown predictor {self.predictor!r}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.multipass_allocation not in ("lambda", "uniform"):
            raise ValueError("multipass_allocation must be 'lambda' or 'uniform'")
        if self.buffer_policy not in ("persist", "reset"):
            raise ValueError("buffer_policy must be 'persist' or 'reset'")
        if self.fluctuation_scope not in ("first", "all"):
            raise ValueError("fluctuation_scope must be 'first' or 'all'")
        if self.ref_refinement < 0:
            raise ValueError("ref_refinement must be >= 0")
        unknown = set(self.onepass) - {f.name for f in dataclasses.fields(OnePassState)}
        if unknown:
            raise ValueError(f"unknown one-pass settings {sorted(unknown)}")
        AllocatorConfig(self.max_iters, self.tolerance, self.minigop_size)

    @property
    def allocator(self) -> AllocatorConfig:
        return AllocatorConfig(self.max_iters, self.tolerance, self.minigop_size)

    @property
    def grid(self) -> LambdaGrid:
        return make_grid(self.lambda_min, self.lambda_max, self.m)

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        d = json.loads(Path(path).read_text())
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["targets"], d["methods"] = list(self.targets), list(self.methods)
        return d

    def script(self) -> ContentScript:
        return generate_script(
            self.seed, self.n_frames, self.n_scenes, self.drift,
            self.coupling_gamma, self.noise_sigma,
        )

    def codec(self, script) -> VirtualCodec:
        # every method gets its own instance with the same noise seed
        return VirtualCodec(script, self.lambda_min, self.lambda_max, seed=self.seed)


def calibration_pairs(script, frames, grid, seed=0, max_ref_mse=0.7):
    """Training rows for the feature predictor from a script and its rendered frames.

    Each reference frame is perturbed with the addition mechanism at a random
    quality level, and labelled with the ground truth at that level.
    """
    codec = VirtualCodec(script)
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(1, len(script)):
        ref_q = float(rng.uniform(0.0, max_ref_mse))
        ref = frames[i - 1]
        if ref_q > 0:
            ref = distortion_addition(ref, ref_q, ref_q, int(rng.integers(2**31)))
        fv = extract_features(FramePair(ref, frames[i]))
        pairs.append((fv, codec.ground_truth_samples(i, ref_q, grid).to_models()))
    return pairs


def build_feature_predictor(cfg: ExperimentConfig):
    """Calibrate on an independent script so evaluation content is held out."""
    train_script = generate_script(
        cfg.seed + 1, min(cfg.n_frames, 200), max(cfg.n_scenes, 4), cfg.drift,
        cfg.coupling_gamma, 0.0,
    )
    frames = render_script_frames(train_script, cfg.width, cfg.height)
    return calibrate_feature_predictor(calibration_pairs(train_script, frames, cfg.grid, cfg.seed))


def run_method(method, cfg: ExperimentConfig, script, r_tar, predictor=None, frames=None,
               n_frames=None, lam=None):
    """Run one method over the script with a fresh codec; returns mini-GOP reports."""
    codec = cfg.codec(script)
    alloc = cfg.allocator
    if method == "ours":
        pred = predictor if predictor is not None else OraclePredictor(codec)
        if isinstance(pred, OraclePredictor):
            pred = OraclePredictor(codec)
        return run_sequence(pred, codec, r_tar, alloc, frames=frames, n_frames=n_frames,
                            seed=cfg.seed, grid=cfg.grid, buffer_policy=cfg.buffer_policy,
                            ref_refinement=cfg.ref_refinement)
    if method == "multipass":
        return run_multipass(codec, cfg.grid, r_tar, alloc, n_frames,
                             cfg.multipass_allocation, cfg.buffer_policy)
    if method == "onepass":
        return run_onepass(codec, r_tar, alloc, OnePassState(**cfg.onepass), n_frames,
                           cfg.buffer_policy)
    if method == "fixed":
        return run_fixed_lambda(codec, lam, n_frames, cfg.minigop_size)
    raise ValueError(f"unknown method {method!r}")


def fluctuation_trial(cfg, script, target_bpp, predictor=None, frames=None, start=0):
    """Fixed-lambda anchor on one mini-GOP, then every method at the anchor's output.

    Returns ``(fixed_report, {method: report})``.
    """
    n = min(cfg.minigop_size, len(script) - start)
    probe = cfg.codec(script)
    lam = anchor_lambda(probe, start, n, n * target_bpp)
    sub = ContentScript(script.truths[start:start + n], script.seed, script.coupling_gamma,
                        script.noise_sigma)
    sub_cfg = dataclasses.replace(cfg, n_frames=n, n_scenes=1)
    sub_frames = None
    if frames is not None:
        sub_frames = Sequence(frames.frames[start:start + n], frames.frame_rate)
    fixed = run_method("fixed", sub_cfg, sub, None, n_frames=n, lam=lam)[0]
    r_tar = fixed.total_bpp
    runs = {}
    for method in cfg.methods:
        if method == "fixed":
            continue
        runs[method] = run_method(method, sub_cfg, sub, r_tar, predictor, sub_frames, n)[0]
    return fixed, runs


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def frame_rows(reports, sequence_id):
    for rep in reports:
        for r in rep.records:
            yield {
                "sequence_id": sequence_id,
                "minigop_index": rep.minigop_index,
                "frame_index": r.frame_index,
                "lambda": float(r.lam),
                "budget_bpp": float(r.budget),
                "actual_bpp": float(r.actual_bpp),
                "actual_mse": float(r.actual_mse),
                "buffer_after": float(r.buffer_after),
                "clamp_flag": r.clamp if rep.clamp is Clamp.IN_RANGE else rep.clamp.value,
            }


def write_report_csv(reports, path, sequence_id="seq0"):
    """Per-frame CSV in the ``FRAME_COLUMNS`` schema."""
    _write_csv(path, FRAME_COLUMNS, frame_rows(reports, sequence_id))


def minigop_rows(reports, method, target_bpp):
    for rep in reports:
        yield {
            "method": method,
            "target_bpp": target_bpp,
            "minigop_index": rep.minigop_index,
            "target_total": float(rep.target),
            "actual_total": rep.total_bpp,
            "delta_r": rep.delta_r,
            "buffer_in": float(rep.buffer_in),
            "buffer_out": float(rep.buffer_out),
            "clamp": rep.clamp.value,
            "control_invocations": rep.control_invocations,
            "encode_invocations": rep.encode_invocations,
            "q_f": quality_fluctuation(rep.mses),
        }


def summary_row(method, target_bpp, reports, q_f_ratio):
    dr = [r.delta_r for r in reports]
    inrange = [r.delta_r for r in reports if r.clamp is Clamp.IN_RANGE]
    ctrl = sum(r.control_invocations for r in reports)
    enc = sum(r.encode_invocations for r in reports)
    return {
        "method": method,
        "target_bpp": target_bpp,
        "mean_delta_r": float(np.mean(dr)),
        "inrange_mean_delta_r": float(np.mean(inrange)) if inrange else float("nan"),
        "max_delta_r": float(np.max(dr)),
        "sequence_delta_r": sequence_rate_error(reports),
        "clamped_minigops": len(dr) - len(inrange),
        "control_invocations_per_minigop": ctrl / len(reports),
        "invocation_ratio": ctrl / enc,
        "mean_q_f": float(np.mean([quality_fluctuation(r.mses) for r in reports])),
        "q_f_ratio": q_f_ratio,
    }


def run_compare(cfg: ExperimentConfig, outdir):
    """Run every selected method at every target and write CSV + SVG artifacts.

    Returns the summary rows. Outputs are deterministic in ``cfg``.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    script = cfg.script()
    predictor, frames = None, None
    if cfg.predictor == "feature":
        predictor = build_feature_predictor(cfg)
        frames = render_script_frames(script, cfg.width, cfg.height)

    starts = [0]
    if cfg.fluctuation_scope == "all":
        starts = [s for s, e in minigop_bounds(cfg.n_frames, cfg.minigop_size)
                  if e - s == cfg.minigop_size]

    frame_out, gop_out, summary, fluct = [], [], [], []
    for t in cfg.targets:
        r_tar = cfg.minigop_size * t
        ratios = {m: [] for m in cfg.methods}
        for pos, start in enumerate(starts):
            fixed, runs = fluctuation_trial(cfg, script, t, predictor, frames, start)
            for method, rep in [("fixed", fixed), *runs.items()]:
                if method in ratios and quality_fluctuation(fixed.mses) > 0:
                    ratios[method].append(fluctuation_ratio(rep.mses, fixed.mses))
                if pos == 0:
                    for i, r in enumerate(rep.records):
                        fluct.append({"method": method, "target_bpp": t, "position": i,
                                      "frame_index": r.frame_index,
                                      "actual_bpp": float(r.actual_bpp),
                                      "actual_mse": float(r.actual_mse)})
        for method in cfg.methods:
            if method == "fixed":
                lam = anchor_lambda(cfg.codec(script), 0, cfg.n_frames, cfg.n_frames * t)
                reports = run_method("fixed", cfg, script, None, lam=lam)
            else:
                reports = run_method(method, cfg, script, r_tar, predictor, frames)
            seq_id = f"{method}@{t:g}"
            frame_out.extend(frame_rows(reports, seq_id))
            gop_out.extend(minigop_rows(reports, method, t))
            q = float(np.mean(ratios[method])) if ratios[method] else float("nan")
            summary.append(summary_row(method, t, reports, q))

    _write_csv(out / "frames.csv", FRAME_COLUMNS, frame_out)
    _write_csv(out / "minigops.csv", MINIGOP_COLUMNS, gop_out)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    _write_csv(out / "fluctuation.csv", FLUCT_COLUMNS, fluct)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    render_plots(out)
    return summary


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_plots(outdir):
    """(Re)build the SVG plots from ``minigops.csv`` and ``fluctuation.csv``."""
    out = Path(outdir)
    gops = _read_csv(out / "minigops.csv")
    fluct = _read_csv(out / "fluctuation.csv") if (out / "fluctuation.csv").exists() else []
    written = []
    for t in sorted({r["target_bpp"] for r in gops}, key=float):
        rows = [r for r in gops if r["target_bpp"] == t]
        series = {}
        for method in dict.fromkeys(r["method"] for r in rows):
            mr = [r for r in rows if r["method"] == method]
            series[method] = ([int(r["minigop_index"]) for r in mr],
                              [float(r["actual_total"]) for r in mr])
        first = [r for r in rows if r["method"] == rows[0]["method"]]
        if rows[0]["method"] != "fixed":
            series["target"] = ([int(r["minigop_index"]) for r in first],
                                [float(r["target_total"]) for r in first])
        path = out / f"rate_{t}.svg"
        path.write_text(svgplot.line_chart(
            series, f"Mini-GOP bitrate, target {t} bpp/frame", "mini-GOP", "total bpp",
            dashed=("target",)))
        written.append(path)

        frows = [r for r in fluct if r["target_bpp"] == t]
        if frows:
            fs = {}
            for method in dict.fromkeys(r["method"] for r in frows):
                mr = [r for r in frows if r["method"] == method]
                fs[method] = ([int(r["position"]) for r in mr], [float(r["actual_mse"]) for r in mr])
            path = out / f"mse_{t}.svg"
            path.write_text(svgplot.line_chart(
                fs, f"First mini-GOP MSE, matched to fixed lambda ({t} bpp/frame)",
                "frame in mini-GOP", "MSE", dashed=("fixed",)))
            written.append(path)
    return written
