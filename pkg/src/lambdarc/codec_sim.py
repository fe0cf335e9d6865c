"""Parametric virtual codec with per-frame hyperbolic ground truth."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CodecRangeError
from .frameio import Sequence, synth_frame
from .predictor import LambdaGrid, RDSampleSet

DEFAULT_RANGES = {
    "alpha1": (0.05, 0.5),
    "beta1": (0.3, 0.8),
    "alpha2": (0.01, 0.2),
    "beta2": (-1.2, -0.4),
}
DEFAULT_LAMBDA_RANGE = (0.1, 409.6)

# relative slack on the lambda range check, absorbs rounding of grid endpoints
_RANGE_SLACK = 1e-9


@dataclass(frozen=True)
class FrameTruth:
    alpha1: float
    beta1: float
    alpha2: float
    beta2: float
    is_scene_change: bool = False

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0 and self.beta1 > 0 and self.beta2 < 0):
            raise ValueError(f"invalid frame truth {self}")

    def rate(self, lam):
        return self.alpha1 * np.asarray(lam, dtype=np.float64) ** self.beta1

    def distortion(self, lam):
        return self.alpha2 * np.asarray(lam, dtype=np.float64) ** self.beta2


@dataclass
class ContentScript:
    truths: list
    seed: int
    coupling_gamma: float = 0.3
    noise_sigma: float = 0.0
    drift: float = 0.0
    n_scenes: int = 1

    def __post_init__(self):
        if not self.truths:
            raise ValueError("a script needs at least one frame")
        if self.coupling_gamma < 0 or self.noise_sigma < 0:
            raise ValueError("coupling_gamma and noise_sigma must be >= 0")

    def __len__(self):
        return len(self.truths)

    @property
    def scene_starts(self):
        return [0] + [i for i, t in enumerate(self.truths) if t.is_scene_change and i > 0]

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "coupling_gamma": self.coupling_gamma,
            "noise_sigma": self.noise_sigma,
            "drift": self.drift,
            "n_scenes": self.n_scenes,
            "truths": [asdict(t) for t in self.truths],
        }

    @classmethod
    def from_record(cls, rec) -> "ContentScript":
        truths = [FrameTruth(**t) for t in rec["truths"]]
        return cls(
            truths,
            int(rec["seed"]),
            float(rec.get("coupling_gamma", 0.3)),
            float(rec.get("noise_sigma", 0.0)),
            float(rec.get("drift", 0.0)),
            int(rec.get("n_scenes", 1)),
        )

    def save(self, path):
        # repr-exact floats keep replays byte-for-byte
        Path(path).write_text(json.dumps(self.to_record(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ContentScript":
        return cls.from_record(json.loads(Path(path).read_text()))


def generate_script(
    seed,
    n_frames,
    n_scenes=1,
    drift=0.0,
    coupling_gamma=0.3,
    noise_sigma=0.0,
    ranges=None,
) -> ContentScript:
    """Random scene-structured ground truth.

    Scenes split the frames evenly (scene ``s`` starts at
    ``s * n_frames // n_scenes``). Each scene draws its base parameters
    log-uniformly from ``ranges``; inside a scene every parameter takes a
    log-domain random walk with step std ``drift``, clipped to its range.
    """
    if not (n_frames >= n_scenes >= 1):
        raise ValueError(f"need n_frames >= n_scenes >= 1, got {n_frames}, {n_scenes}")
    if drift < 0:
        raise ValueError("drift must be >= 0")
    ranges = {**DEFAULT_RANGES, **(ranges or {})}
    names = ("alpha1", "beta1", "alpha2", "beta2")
    # log bounds of the parameter magnitudes
    bounds = np.array([sorted(np.log(np.abs(ranges[n]))) for n in names])
    signs = np.array([1.0, 1.0, 1.0, -1.0])

    rng = np.random.default_rng(seed)
    starts = {s * n_frames // n_scenes for s in range(n_scenes)}
    truths = []
    logp = None
    for i in range(n_frames):
        if i in starts:
            logp = rng.uniform(bounds[:, 0], bounds[:, 1])
        elif drift > 0:
            logp = np.clip(logp + drift * rng.standard_normal(4), bounds[:, 0], bounds[:, 1])
        vals = signs * np.exp(logp)
        truths.append(FrameTruth(*map(float, vals), is_scene_change=(i in starts and i > 0)))
    return ContentScript(truths, int(seed), coupling_gamma, noise_sigma, drift, n_scenes)


class VirtualCodec:
    """Closed-loop encode target.

    ``encode_frame`` returns noisy measurements and counts invocations;
    ``ground_truth_samples`` exposes the noiseless expectation without
    touching the counter or the noise stream.
    """

    def __init__(self, script: ContentScript, lambda_min=None, lambda_max=None, seed=None):
        self.script = script
        self.lambda_min = DEFAULT_LAMBDA_RANGE[0] if lambda_min is None else float(lambda_min)
        self.lambda_max = DEFAULT_LAMBDA_RANGE[1] if lambda_max is None else float(lambda_max)
        if not 0 < self.lambda_min < self.lambda_max:
            raise ValueError("need 0 < lambda_min < lambda_max")
        self.invocation_count = 0
        self._rng = np.random.default_rng(script.seed if seed is None else seed)

    @property
    def n_frames(self) -> int:
        return len(self.script)

    def _truth(self, frame_index) -> FrameTruth:
        if not 0 <= frame_index < len(self.script):
            raise ValueError(f"frame index {frame_index} outside script of {len(self.script)}")
        return self.script.truths[frame_index]

    def _coupling(self, ref_mse) -> float:
        return 1.0 + self.script.coupling_gamma * ref_mse

    def expected(self, frame_index, lam, ref_mse=0.0):
        t = self._truth(frame_index)
        g = self._coupling(ref_mse)
        return float(t.rate(lam)) * g, float(t.distortion(lam)) * g

    def in_range(self, lam) -> bool:
        return (
            self.lambda_min * (1 - _RANGE_SLACK) <= lam <= self.lambda_max * (1 + _RANGE_SLACK)
        )

    def encode_frame(self, frame_index, lam, ref_mse=0.0):
        """One real encode: ``(bpp, mse)`` with lognormal measurement noise."""
        if not self.in_range(lam):
            raise CodecRangeError(
                f"lambda {lam} outside [{self.lambda_min}, {self.lambda_max}]"
            )
        bpp, mse = self.expected(frame_index, lam, ref_mse)
        eps = self._rng.standard_normal(2) * self.script.noise_sigma
        self.invocation_count += 1
        return bpp * math.exp(eps[0]), mse * math.exp(eps[1])

    def ground_truth_samples(self, frame_index, ref_mse, grid: LambdaGrid) -> RDSampleSet:
        t = self._truth(frame_index)
        g = self._coupling(ref_mse)
        return RDSampleSet(grid, t.rate(grid.values) * g, t.distortion(grid.values) * g)


# spatial_energy per unit of ln(alpha1 / alpha1_floor)
ENERGY_PER_LOG_ALPHA = 1.0


def _scene_seed(script_seed, scene):
    return int(np.random.SeedSequence([int(script_seed), int(scene)]).generate_state(1)[0])


def render_script_frames(script: ContentScript, width, height, frame_rate=30.0) -> Sequence:
    """Pixel frames whose texture tracks the script's rate parameter.

    Texture seed changes per scene and phase restarts at each scene change,
    so scene cuts show up as large temporal differences.
    """
    floor = DEFAULT_RANGES["alpha1"][0]
    frames = []
    scene, phase = 0, 0
    for i, t in enumerate(script.truths):
        if t.is_scene_change:
            scene, phase = scene + 1, 0
        energy = ENERGY_PER_LOG_ALPHA * max(0.0, math.log(t.alpha1 / floor))
        frames.append(synth_frame(width, height, energy, float(phase), _scene_seed(script.seed, scene)))
        phase += 1
    return Sequence(frames, frame_rate)
