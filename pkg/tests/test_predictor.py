import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from lambdarc.codec_sim import ContentScript, FrameTruth, VirtualCodec
from lambdarc.errors import CalibrationError
from lambdarc.frameio import Frame, FramePair, synth_frame
from lambdarc.predictor import (
    FeatureRDPredictor,
    FeatureVector,
    LambdaGrid,
    OraclePredictor,
    RDSampleSet,
    addition_scale,
    calibrate_feature_predictor,
    distortion_addition,
    downsample_240p,
    extract_features,
    make_grid,
    oracle_predict,
    prediction_mae,
)
from lambdarc.rdmodel import FrameModelSet, PowerLawModel


def _codec(truth=(1.0, 1.0, 1.0, -1.0), gamma=0.0, lmin=0.1, lmax=409.6):
    script = ContentScript([FrameTruth(*truth)] * 3, seed=0, coupling_gamma=gamma)
    return VirtualCodec(script, lmin, lmax)


# grid construction

def test_make_grid_examples():
    np.testing.assert_allclose(make_grid(1, 256, 3).values, [1, 16, 256])
    assert list(make_grid(2, 8, 2).values) == [2, 8]
    g = make_grid(0.1, 409.6, 8)
    ratios = np.asarray(g.values[1:]) / np.asarray(g.values[:-1])
    np.testing.assert_allclose(ratios, 4096 ** (1 / 7), rtol=1e-12)
    assert g.lambda_min == 0.1 and g.lambda_max == 409.6 and len(g) == 8


@pytest.mark.parametrize("args", [(2, 1, 4), (0, 1, 4), (1, 2, 1)])
def test_make_grid_errors(args):
    with pytest.raises(ValueError):
        make_grid(*args)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 10), st.floats(1.01, 1e4), st.integers(2, 20))
def test_grid_is_geometric(lmin, span, m):
    g = make_grid(lmin, lmin * span, m)
    logs = np.log(g.values)
    np.testing.assert_allclose(np.diff(logs), np.diff(logs)[0], rtol=1e-9)
    assert g.values[0] == lmin and g.values[-1] == lmin * span


def test_grid_rejects_unsorted():
    with pytest.raises(ValueError):
        LambdaGrid([2.0, 1.0])


# sample sets

@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(1e-3, 10), min_size=8, max_size=8),
    st.lists(st.floats(1e-4, 1), min_size=8, max_size=8),
)
def test_sample_set_is_monotone_after_repair(bpp, mse):
    s = RDSampleSet(make_grid(0.1, 409.6, 8), bpp, mse)
    assert np.all(np.diff(s.bpp) >= 0)
    assert np.all(np.diff(s.mse) <= 0)


def test_repair_pools_violators():
    s = RDSampleSet(make_grid(1, 4, 3), [1.0, 3.0, 2.0], [0.5, 0.6, 0.1])
    np.testing.assert_allclose(s.bpp, [1.0, 2.5, 2.5])
    np.testing.assert_allclose(s.mse, [0.55, 0.55, 0.1])
    assert s.extremes == (0.55, 0.1)
    raw = RDSampleSet(make_grid(1, 4, 3), [1.0, 3.0, 2.0], [0.5, 0.6, 0.1], repair=False)
    np.testing.assert_array_equal(raw.bpp, [1.0, 3.0, 2.0])


def test_sample_set_validation():
    g = make_grid(1, 4, 3)
    with pytest.raises(ValueError):
        RDSampleSet(g, [1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        RDSampleSet(g, [0, 1, 2], [3, 2, 1])


def test_prediction_mae_examples():
    g2 = make_grid(1, 2, 2)
    a = RDSampleSet(g2, [1, 2], [0.2, 0.1])
    assert prediction_mae(a, a) == (0, 0)
    l_r, _ = prediction_mae(RDSampleSet(g2, [1, 2], [0.2, 0.1]), RDSampleSet(g2, [2, 4], [0.2, 0.1]))
    assert l_r == pytest.approx(1.5)
    p = RDSampleSet(g2, [1, 2], [0.1, 0.2], repair=False)
    q = RDSampleSet(g2, [1, 2], [0.2, 0.1])
    assert prediction_mae(p, q)[1] == pytest.approx(0.1)
    with pytest.raises(ValueError):
        prediction_mae(a, RDSampleSet(make_grid(1, 3, 2), [1, 2], [0.2, 0.1]))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(1e-3, 10), min_size=4, max_size=4),
    st.lists(st.floats(1e-3, 10), min_size=4, max_size=4),
)
def test_prediction_mae_symmetric(b1, b2):
    g = make_grid(1, 8, 4)
    m = [0.4, 0.3, 0.2, 0.1]
    a, b = RDSampleSet(g, b1, m), RDSampleSet(g, b2, m)
    assert prediction_mae(a, b) == prediction_mae(b, a)
    assert (prediction_mae(a, b)[0] == 0) == bool(np.all(a.bpp == b.bpp))


# downsampling

def test_downsample_1080p():
    out = downsample_240p(Frame(np.zeros((1080, 1920))))
    assert out.shape == (240, 426)


def test_downsample_passthrough():
    f = Frame(np.zeros((240, 416)))
    assert downsample_240p(f) is f


def test_downsample_preserves_constant():
    out = downsample_240p(Frame(np.full((500, 731), 0.3)))
    assert out.height == 240 and out.width % 2 == 0
    np.testing.assert_allclose(out.luma, 0.3, atol=1e-12)


def test_downsample_preserves_mean():
    rng = np.random.default_rng(0)
    f = Frame(rng.uniform(size=(480, 640)))
    assert downsample_240p(f).luma.mean() == pytest.approx(f.luma.mean(), rel=1e-9)


# distortion addition

def test_addition_scale_examples():
    assert addition_scale(0.04, 0.04) == pytest.approx(0.2, rel=1e-12)
    expected = math.sqrt(math.log((math.exp(0.09) + math.exp(0.01)) / 2))
    assert addition_scale(0.09, 0.01) == pytest.approx(expected, rel=1e-12)
    assert addition_scale(0.09, 0.01) == pytest.approx(0.22538, abs=1e-5)


@pytest.mark.parametrize("d", [0.04, 0.01])
def test_addition_field_variance(d):
    ref = Frame(np.full((400, 400), 0.5))
    out = distortion_addition(ref, d, d, seed=7)
    var = np.var(out.luma - ref.luma)
    assert var == pytest.approx(addition_scale(d, d) ** 2, rel=0.05)


def test_addition_deterministic_and_clamped():
    ref = synth_frame(32, 32, 2.0, seed=1)
    a = distortion_addition(ref, 0.9, 0.5, seed=4)
    b = distortion_addition(ref, 0.9, 0.5, seed=4)
    np.testing.assert_array_equal(a.luma, b.luma)
    assert a.luma.min() >= 0 and a.luma.max() <= 1


@pytest.mark.parametrize("dmax,dmin", [(0.1, 0.2), (0.1, 0.0), (1.5, 0.1)])
def test_addition_domain_errors(dmax, dmin):
    with pytest.raises(ValueError):
        distortion_addition(Frame(np.zeros((4, 4))), dmax, dmin)


def test_addition_variance_vanishes_with_distortion():
    ref = Frame(np.full((64, 64), 0.5))
    small = distortion_addition(ref, 1e-8, 1e-8, seed=0)
    assert np.var(small.luma - 0.5) < 1e-7


# features

def test_features_identical_pair():
    f = synth_frame(64, 48, 0.5, seed=2)
    assert extract_features(FramePair(f, f)).temporal_mad == 0


def test_features_constant_frame():
    f = Frame(np.full((32, 32), 0.4))
    fv = extract_features(FramePair(f, f))
    assert fv.spatial_grad == 0 and fv.log_downsample_ratio == 0


def test_features_gradient_tracks_energy():
    lo = extract_features(FramePair(*[synth_frame(64, 48, 0.2, seed=3)] * 2)).spatial_grad
    hi = extract_features(FramePair(*[synth_frame(64, 48, 0.8, seed=3)] * 2)).spatial_grad
    assert lo < hi


def test_features_downsample_ratio():
    f = Frame(np.full((480, 640), 0.5))
    fv = extract_features(FramePair(f, f))
    assert fv.log_downsample_ratio == pytest.approx(math.log(480 * 640 / (240 * 320)))


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector(-0.1, 0.0, 0.0)


# calibration

def _model(la1, b1, la2, b2):
    return FrameModelSet.from_models(
        PowerLawModel(math.exp(la1), b1), PowerLawModel(math.exp(la2), b2), 0.1, 409.6
    )


def test_calibration_recovers_exact_coefficient():
    rng = np.random.default_rng(5)
    pairs = []
    for _ in range(12):
        fv = FeatureVector(rng.uniform(0, 0.3), rng.uniform(0, 0.2), 0.0)
        pairs.append((fv, _model(2 * fv.temporal_mad, 0.5, math.log(0.05), -0.8)))
    est = calibrate_feature_predictor(pairs)
    assert est.coef_[0, 0] == pytest.approx(2, abs=1e-6)
    np.testing.assert_allclose(est.coef_[1:], 0, atol=1e-9)
    assert not est.active_features_[2]


def _law(fv):
    return (
        -2.0 + 3.0 * fv.temporal_mad + 4.0 * fv.spatial_grad,
        0.4 + 1.5 * fv.spatial_grad,
        -3.0 + 2.0 * fv.temporal_mad,
        -0.6 - 2.0 * fv.spatial_grad,
    )


def _synthetic_pairs(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        e = rng.uniform(0.1, 2.0)
        s = int(rng.integers(1000))
        ref = synth_frame(64, 48, e, phase=0.0, seed=s)
        cur = synth_frame(64, 48, e, phase=rng.uniform(0, 3), seed=s)
        out.append(FramePair(ref, cur))
    return out


def test_calibrated_predictor_matches_oracle_on_held_out_pair():
    grid = make_grid(0.1, 409.6, 8)
    train = [(extract_features(p), _model(*_law(extract_features(p)))) for p in _synthetic_pairs(16, 1)]
    est = calibrate_feature_predictor(train)
    for pair in _synthetic_pairs(3, 99):
        la1, b1, la2, b2 = _law(extract_features(pair))
        truth = RDSampleSet(grid, math.exp(la1) * np.asarray(grid.values) ** b1,
                            math.exp(la2) * np.asarray(grid.values) ** b2)
        pred = est.predict_samples(pair, grid)
        l_r, _ = prediction_mae(pred, truth)
        assert l_r <= 0.10 * truth.bpp.mean()


def test_calibration_rank_errors():
    fv = FeatureVector(0.1, 0.2, 0.0)
    with pytest.raises(CalibrationError):
        calibrate_feature_predictor([(fv, _model(0, 0.5, -3, -0.8))] * 10)
    with pytest.raises(CalibrationError):
        calibrate_feature_predictor([(fv, _model(0, 0.5, -3, -0.8))] * 3)
    X = np.column_stack([np.linspace(0, 1, 10), 2 * np.linspace(0, 1, 10), np.zeros(10)])
    with pytest.raises(CalibrationError):
        FeatureRDPredictor().fit(X, np.zeros((10, 4)))


def test_predictor_clips_exponents_and_round_trips(tmp_path):
    X = np.column_stack([np.linspace(0, 1, 10), np.linspace(1, 0, 10) ** 2, np.zeros(10)])
    Y = np.column_stack([X[:, 0], -X[:, 0], X[:, 1], X[:, 1]])
    est = FeatureRDPredictor(min_abs_beta=0.1).fit(X, Y)
    _, b1, _, b2 = est.predict_params(FeatureVector(1.0, 1.0, 0.0))
    assert b1 >= 0.1 and b2 <= -0.1
    path = tmp_path / "pred.json"
    est.save(path)
    back = FeatureRDPredictor.load(path)
    np.testing.assert_allclose(back.predict(X), est.predict(X))
    assert clone(est).get_params() == {"min_abs_beta": 0.1}


def test_predict_frame_is_deterministic():
    X = np.column_stack([np.linspace(0, 0.2, 10), np.linspace(0.01, 0.1, 10) ** 2, np.zeros(10)])
    Y = np.column_stack([-1 + X[:, 0], 0.5 + 0 * X[:, 0], -3 + X[:, 1], -0.8 + 0 * X[:, 0]])
    est = FeatureRDPredictor().fit(X, Y)
    frames = [synth_frame(32, 32, 1.0, phase=p, seed=0) for p in range(3)]
    grid = make_grid(0.1, 409.6, 8)
    a = est.predict_frame(2, (0.05, 0.01), grid, frames, seed=3)
    b = est.predict_frame(2, (0.05, 0.01), grid, frames, seed=3)
    np.testing.assert_array_equal(a.bpp, b.bpp)
    with pytest.raises(ValueError):
        est.predict_frame(0, None, grid, None)


# oracle

def test_oracle_predict_examples():
    grid = LambdaGrid([1.0, 2.0, 4.0])
    s = oracle_predict(_codec(lmin=1, lmax=4), 0, 0.0, grid)
    np.testing.assert_allclose(s.bpp, [1, 2, 4])
    np.testing.assert_allclose(s.mse, [1, 0.5, 0.25])
    codec = _codec(gamma=0.5, lmin=1, lmax=4)
    base = oracle_predict(codec, 1, 0.0, grid)
    coupled = oracle_predict(codec, 1, 0.1, grid)
    np.testing.assert_allclose(coupled.mse, base.mse * 1.05)
    assert codec.invocation_count == 0
    with pytest.raises((IndexError, ValueError)):
        oracle_predict(codec, 3, 0.0, grid)


def test_oracle_bpp_strictly_increasing():
    codec = _codec(truth=(0.12, 0.55, 0.04, -0.9))
    s = oracle_predict(codec, 0, 0.0, make_grid(0.1, 409.6, 8))
    assert np.all(np.diff(s.bpp) > 0)


def test_oracle_predictor_uses_reference_estimate():
    codec = _codec(gamma=1.0)
    grid = make_grid(0.1, 409.6, 8)
    pred = OraclePredictor(codec)
    fresh = pred.predict_frame(0, None, grid)
    coupled = pred.predict_frame(1, (0.04, 0.04), grid)
    np.testing.assert_allclose(coupled.bpp, fresh.bpp * 1.04)
