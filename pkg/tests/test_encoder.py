import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mvh.autodiff as ad
from gradcheck import check_grads
from mvh.autodiff import Tensor
from mvh.corpus import N_OBS
from mvh.encoder import (
    EncoderConfig,
    encode,
    encoder_loss,
    encoder_loss_parts,
    export_heatmap,
    fuse_view_predictions,
    grad_cam,
    init_encoder_params,
    uncertainty_report,
)
from mvh.errors import ShapeError, ValidationError
from mvh.pgm import read_pgm

TINY = EncoderConfig(image_size=8, channels=(2, 3), n_concepts=2)


def tiny_params(seed=0):
    return init_encoder_params(TINY, seed)


def test_config_geometry():
    cfg = EncoderConfig()
    assert cfg.k == 16 and cfg.map_side == 4 and cfg.d_v == 32
    assert TINY.k == 4 and TINY.d_v == 3
    with pytest.raises(ValidationError):
        EncoderConfig(image_size=30)


def test_zero_heads_give_half_probabilities():
    params = tiny_params()
    params["enc.obs.w"].data[:] = 0.0
    params["enc.obs.b"].data[:] = 0.0
    out = encode(Tensor(np.zeros((1, 8, 8))), params, TINY)
    np.testing.assert_allclose(out.obs_probs.data, np.full(N_OBS, 0.5), atol=1e-15)


def test_output_shapes_and_global_is_mean_of_locals():
    params = tiny_params()
    rng = np.random.default_rng(0)
    out = encode(Tensor(rng.uniform(size=(1, 8, 8))), params, TINY)
    assert out.local_features.data.shape == (TINY.k, TINY.d_v)
    assert out.global_feature.data.shape == (TINY.d_v,)
    np.testing.assert_allclose(out.global_feature.data,
                               out.local_features.data.mean(axis=0), atol=1e-9)
    assert np.all(out.obs_probs.data > 0) and np.all(out.obs_probs.data < 1)


def test_wrong_image_size_is_shape_error():
    with pytest.raises(ShapeError):
        encode(Tensor(np.zeros((1, 6, 6))), tiny_params(), TINY)


# loss ---------------------------------------------------------------------------

def _outputs_for_probs(probs):
    t = Tensor(np.asarray(probs, dtype=np.float64))
    from mvh.encoder import EncoderOutput
    return EncoderOutput(None, None, t, None)


def test_identical_views_zero_cvc():
    labels = Tensor(np.ones(3))
    out = _outputs_for_probs([0.7, 0.6, 0.5])
    _, _, cvc = encoder_loss_parts(out, _outputs_for_probs([0.7, 0.6, 0.5]), labels)
    assert cvc.item() == 0.0


def test_loss_boundary_case_dominated_by_wrong_view():
    near_one = _outputs_for_probs(np.full(N_OBS, 1 - 1e-9))
    near_zero = _outputs_for_probs(np.full(N_OBS, 1e-9))
    labels = Tensor(np.ones(N_OBS))
    lam = 2.0
    loss = encoder_loss(near_one, near_zero, labels, lam).item()
    bce_lat = -N_OBS * math.log(1e-9)
    assert loss == pytest.approx(bce_lat + lam * N_OBS, rel=1e-6)


def test_loss_matches_scalar_loop_oracle():
    rng = np.random.default_rng(1)
    pf = rng.uniform(0.05, 0.95, size=N_OBS)
    pl = rng.uniform(0.05, 0.95, size=N_OBS)
    y = rng.integers(0, 2, size=N_OBS).astype(float)
    lam = 0.37
    expected = 0.0
    for j in range(N_OBS):
        expected -= y[j] * math.log(pf[j]) + (1 - y[j]) * math.log(1 - pf[j])
        expected -= y[j] * math.log(pl[j]) + (1 - y[j]) * math.log(1 - pl[j])
        expected += lam * (pf[j] - pl[j]) ** 2
    got = encoder_loss(_outputs_for_probs(pf), _outputs_for_probs(pl), Tensor(y), lam).item()
    assert got == pytest.approx(expected, abs=1e-10)


def test_loss_nonnegative_and_reduces_to_bce_at_lambda_zero():
    rng = np.random.default_rng(2)
    pf = rng.uniform(0.05, 0.95, size=N_OBS)
    pl = rng.uniform(0.05, 0.95, size=N_OBS)
    y = rng.integers(0, 2, size=N_OBS).astype(float)
    l0 = encoder_loss(_outputs_for_probs(pf), _outputs_for_probs(pl), Tensor(y), 0.0).item()
    bce_f, bce_l, _ = encoder_loss_parts(_outputs_for_probs(pf), _outputs_for_probs(pl), Tensor(y))
    assert l0 >= 0
    assert l0 == pytest.approx(bce_f.item() + bce_l.item(), abs=1e-12)


# view fusion -----------------------------------------------------------------------

def test_fuse_view_predictions_hand_case():
    fused = fuse_view_predictions(Tensor(np.array([0.2, 0.9])), Tensor(np.array([0.7, 0.1])))
    np.testing.assert_array_equal(fused.data, [0.7, 0.9])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)), min_size=1, max_size=14))
def test_fuse_view_predictions_properties(pairs):
    a = Tensor(np.array([x for x, _ in pairs]))
    b = Tensor(np.array([y for _, y in pairs]))
    ab = fuse_view_predictions(a, b).data
    ba = fuse_view_predictions(b, a).data
    np.testing.assert_array_equal(ab, ba)                       # commutative
    np.testing.assert_array_equal(fuse_view_predictions(a, a).data, a.data)  # idempotent
    bumped = fuse_view_predictions(Tensor(np.minimum(a.data + 0.005, 1.0)), b).data
    assert np.all(bumped >= ab)                                 # monotone


def test_fuse_view_predictions_shape_error():
    with pytest.raises(ShapeError):
        fuse_view_predictions(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


# grad-cam -----------------------------------------------------------------------------

def test_grad_cam_zero_weights_all_zero_heatmap():
    params = tiny_params()
    for i in range(2):
        params[f"enc.conv{i}.w"].data[:] = 0.0
        params[f"enc.conv{i}.b"].data[:] = 0.0
    cam = grad_cam(Tensor(np.full((1, 8, 8), 0.5)), params, TINY, 0)
    np.testing.assert_array_equal(cam, np.zeros((2, 2)))


def test_grad_cam_range_and_shape():
    params = tiny_params(seed=3)
    rng = np.random.default_rng(3)
    cam = grad_cam(Tensor(rng.uniform(size=(1, 8, 8))), params, TINY, 5)
    assert cam.shape == (TINY.map_side, TINY.map_side)
    assert cam.min() >= 0.0 and cam.max() <= 1.0


def test_grad_cam_class_index_validated():
    with pytest.raises(ValidationError):
        grad_cam(Tensor(np.zeros((1, 8, 8))), tiny_params(), TINY, N_OBS)


def test_export_heatmap_round_trip(tmp_path):
    cam = np.array([[0.0, 0.5], [1.0, 0.25]])
    export_heatmap(tmp_path / "h", cam)
    back = read_pgm(tmp_path / "h.pgm")
    np.testing.assert_allclose(back, cam, atol=1 / 255)
    csv_text = (tmp_path / "h.csv").read_text()
    assert csv_text.splitlines()[0] == "0.0,0.5"


# uncertainty banding ------------------------------------------------------------------

def test_uncertainty_bands():
    probs = np.full(N_OBS, 0.5)
    probs[0], probs[1] = 0.05, 0.95
    rows = uncertainty_report(Tensor(probs))
    assert rows[0][2] == "negative"
    assert rows[1][2] == "positive"
    assert rows[2][2] == "uncertain"


def test_uncertainty_threshold_validation():
    with pytest.raises(ValidationError):
        uncertainty_report(Tensor(np.full(N_OBS, 0.5)), low=0.7, high=0.6)


# full-graph gradient check (tiny config) ------------------------------------------------

def test_full_encoder_gradcheck_tiny_config():
    params = tiny_params(seed=4)
    rng = np.random.default_rng(4)
    front = Tensor(rng.uniform(0.1, 0.9, size=(1, 8, 8)))
    lat = Tensor(rng.uniform(0.1, 0.9, size=(1, 8, 8)))
    labels = Tensor(rng.integers(0, 2, size=N_OBS).astype(float))

    def build():
        return encoder_loss(encode(front, params, TINY), encode(lat, params, TINY), labels, 1.0)

    check_grads(build, params, rel_tol=1e-4, sample=40)
