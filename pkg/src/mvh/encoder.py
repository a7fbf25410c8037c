"""Small convolutional multi-view image encoder.

Three conv->relu->2x2-max-pool blocks produce a (d_v, sqrt(k), sqrt(k))
feature map whose spatial cells are the k local region vectors; observation
and concept heads are single fully connected layers with sigmoids on the
average-pooled global feature. The training loss is the two views' summed
BCE plus a cross-view consistency penalty on the prediction gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, seeded_uniform
from .corpus import LABEL_NAMES, N_OBS
from .errors import ShapeError, ValidationError
from .pgm import write_pgm


@dataclass
class EncoderConfig:
    image_size: int = 32
    channels: tuple = (8, 16, 32)
    n_obs: int = N_OBS
    n_concepts: int = 1
    lambda_cvc: float = 1.0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        stride = 2 ** len(self.channels)
        if self.image_size % stride:
            raise ValidationError(
                f"image_size {self.image_size} not divisible by total pooling stride {stride}")
        if self.map_side < 1:
            raise ValidationError(f"config yields an empty feature map (k = {self.k})")
        if self.n_obs != N_OBS:
            raise ValidationError(f"n_obs must be {N_OBS}, got {self.n_obs}")

    @property
    def map_side(self):
        return self.image_size // (2 ** len(self.channels))

    @property
    def k(self):
        return self.map_side ** 2

    @property
    def d_v(self):
        return self.channels[-1]


@dataclass
class EncoderOutput:
    local_features: Tensor   # (k, d_v)
    global_feature: Tensor   # (d_v,) mean of the local rows
    obs_probs: Tensor        # (14,) in (0, 1)
    concept_probs: Tensor    # (p,) in (0, 1)
    feature_maps: Tensor = field(default=None, repr=False)  # (d_v, s, s), for Grad-CAM


def init_encoder_params(config, seed):
    """Seeded parameter dict for the conv stack and both heads."""
    params = {}
    cin = 1
    for i, cout in enumerate(config.channels):
        fan_in = cin * 9
        params[f"enc.conv{i}.w"] = seeded_uniform(f"enc.conv{i}.w", (cout, cin, 3, 3), fan_in, seed)
        params[f"enc.conv{i}.b"] = seeded_uniform(f"enc.conv{i}.b", (cout,), fan_in, seed)
        cin = cout
    d_v = config.d_v
    params["enc.obs.w"] = seeded_uniform("enc.obs.w", (config.n_obs, d_v), d_v, seed)
    params["enc.obs.b"] = seeded_uniform("enc.obs.b", (config.n_obs,), d_v, seed)
    params["enc.concept.w"] = seeded_uniform("enc.concept.w", (config.n_concepts, d_v), d_v, seed)
    params["enc.concept.b"] = seeded_uniform("enc.concept.b", (config.n_concepts,), d_v, seed)
    return params


def _conv_stack(image, params, config):
    x = image
    for i in range(len(config.channels)):
        x = ad.max_pool2d(ad.relu(ad.conv2d(x, params[f"enc.conv{i}.w"], params[f"enc.conv{i}.b"])))
    return x  # (d_v, s, s)


def encode(image, params, config):
    """Forward pass for one view; image is a (1, size, size) Tensor in [0,1]."""
    expected = (1, config.image_size, config.image_size)
    if image.data.shape != expected:
        raise ShapeError(f"expected image of shape {expected}, got {image.data.shape}")
    maps = _conv_stack(image, params, config)
    local = ad.transpose(ad.reshape(maps, (config.d_v, config.k)))  # (k, d_v)
    global_feature = ad.mean_pool(local)
    obs_probs = ad.sigmoid(ad.add(ad.matmul(params["enc.obs.w"], global_feature), params["enc.obs.b"]))
    concept_probs = ad.sigmoid(
        ad.add(ad.matmul(params["enc.concept.w"], global_feature), params["enc.concept.b"]))
    return EncoderOutput(local, global_feature, obs_probs, concept_probs, feature_maps=maps)


def encoder_loss_parts(front, lat, labels):
    """The three loss terms (front BCE, lateral BCE, squared view gap)."""
    return (ad.bce_loss(front.obs_probs, labels),
            ad.bce_loss(lat.obs_probs, labels),
            ad.mse_loss(front.obs_probs, lat.obs_probs))


def encoder_loss(front, lat, labels, lambda_cvc):
    """Summed BCE of both views plus lambda * squared view disagreement."""
    bce_f, bce_l, cvc = encoder_loss_parts(front, lat, labels)
    return ad.add(ad.add(bce_f, bce_l), ad.scale(cvc, lambda_cvc))


def fuse_view_predictions(front, lat):
    """Elementwise max of the two views' predicted probabilities (evaluation-time)."""
    f = front.data if isinstance(front, Tensor) else np.asarray(front)
    l = lat.data if isinstance(lat, Tensor) else np.asarray(lat)
    if f.shape != l.shape:
        raise ShapeError(f"view predictions disagree in shape: {f.shape} vs {l.shape}")
    return Tensor(np.maximum(f, l))


def grad_cam(image, params, config, class_index):
    """Gradient-weighted activation heatmap (map_side x map_side) for one class.

    Channel weights are the spatial means of d(logit)/d(map); the heatmap is
    relu of the weighted map sum, min-max normalized (all-zero stays zero).
    """
    if not 0 <= class_index < config.n_obs:
        raise ValidationError(f"class index {class_index} out of range 0..{config.n_obs - 1}")
    maps_data = _conv_stack(image, params, config).data  # inference pass
    leaf = Tensor(maps_data.copy(), requires_grad=True)
    with Tape() as tape:
        local = ad.transpose(ad.reshape(leaf, (config.d_v, config.k)))
        global_feature = ad.mean_pool(local)
        row = Tensor(params["enc.obs.w"].data[class_index:class_index + 1, :])
        logit = ad.reshape(ad.matmul(row, global_feature), ())
    tape.backward(logit)
    weights = leaf.grad.mean(axis=(1, 2))                        # (d_v,)
    cam = np.maximum((weights[:, None, None] * maps_data).sum(axis=0), 0.0)
    span = cam.max() - cam.min()
    if span > 0:
        cam = (cam - cam.min()) / span
    return cam


def uncertainty_report(obs_probs, low=0.4, high=0.6):
    """Band every observation as negative / uncertain / positive."""
    if not 0 < low < high < 1:
        raise ValidationError(f"need 0 < low < high < 1, got low={low} high={high}")
    probs = obs_probs.data if isinstance(obs_probs, Tensor) else np.asarray(obs_probs)
    if probs.shape != (N_OBS,):
        raise ShapeError(f"expected {N_OBS} observation probabilities, got shape {probs.shape}")
    rows = []
    for name, p in zip(LABEL_NAMES, probs):
        band = "negative" if p < low else ("positive" if p > high else "uncertain")
        rows.append((name, float(p), band))
    return rows


def export_heatmap(path_base, cam):
    """Write a heatmap as {base}.pgm plus {base}.csv of raw cell values."""
    write_pgm(str(path_base) + ".pgm", cam)
    lines = [",".join(repr(float(v)) for v in row) for row in cam]
    with open(str(path_base) + ".csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
