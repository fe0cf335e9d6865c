"""Lambda-domain rate control for learned video codecs, with a simulated codec bench."""

from .allocator import (
    AllocatorConfig,
    Clamp,
    Feasibility,
    LambdaRateController,
    plan_minigop,
    run_minigop,
    run_sequence,
    search_target_distortion,
)
from .codec_sim import ContentScript, VirtualCodec, generate_script
from .frameio import Frame, FramePair, Sequence, load_raw, load_y4m, write_y4m
from .metrics import fluctuation_ratio, quality_fluctuation, rate_error
from .predictor import (
    FeatureRDPredictor,
    LambdaGrid,
    OraclePredictor,
    RDSampleSet,
    make_grid,
)
from .rdmodel import FrameModelSet, PowerLawModel, PowerLawRegressor, RDCurve, fit_power_law

__version__ = "0.1.0"

__all__ = [
    "AllocatorConfig", "Clamp", "ContentScript", "Feasibility", "FeatureRDPredictor",
    "Frame", "FrameModelSet", "FramePair", "LambdaGrid", "LambdaRateController",
    "OraclePredictor", "PowerLawModel", "PowerLawRegressor", "RDCurve", "RDSampleSet",
    "Sequence", "VirtualCodec", "fit_power_law", "fluctuation_ratio", "generate_script",
    "load_raw", "load_y4m", "make_grid", "plan_minigop", "quality_fluctuation",
    "rate_error", "run_minigop", "run_sequence", "search_target_distortion", "write_y4m",
]
