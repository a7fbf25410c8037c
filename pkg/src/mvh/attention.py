"""Multi-view fusion schemes plus the visual-sentence and concept-word attentions.

Visual attention scores each local region i as W_a . tanh(W_v v_i + W_s h_prev),
softmaxes over regions, and returns the attention-weighted region sum. Concept
attention does the same over concept embeddings, with each embedding row
scaled by its predicted concept probability before projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, seeded_uniform
from .errors import ConfigError, ShapeError, ValidationError

FUSION_SCHEMES = ("concat", "early", "late")
LATE_COMBINES = ("project", "mean")


@dataclass
class AttentionParams:
    """Learned attention weights; shapes follow the config dims."""

    w_v: Tensor     # (d_a, d_v) visual projection
    w_s: Tensor     # (d_a, d_h_sent) sentence-state projection
    w_a: Tensor     # (1, d_a) visual score read-out
    w_c: Tensor     # (d_c, d_ac) concept projection
    w_w: Tensor     # (d_ac, d_h_word) word-state projection
    w_ac: Tensor    # (1, d_ac) concept score read-out
    w_late: Tensor  # (d_v, 2*d_v) late-fusion combine projection

    @classmethod
    def init(cls, d_v, d_h_sent, d_h_word, d_a, d_c, d_ac, seed):
        return cls(
            w_v=seeded_uniform("att.visual.w_v", (d_a, d_v), d_v, seed),
            w_s=seeded_uniform("att.visual.w_s", (d_a, d_h_sent), d_h_sent, seed),
            w_a=seeded_uniform("att.visual.w_a", (1, d_a), d_a, seed),
            w_c=seeded_uniform("att.concept.w_c", (d_c, d_ac), d_c, seed),
            w_w=seeded_uniform("att.concept.w_w", (d_ac, d_h_word), d_h_word, seed),
            w_ac=seeded_uniform("att.concept.w_ac", (1, d_ac), d_ac, seed),
            w_late=seeded_uniform("att.late.w_late", (d_v, 2 * d_v), 2 * d_v, seed),
        )

    def named(self):
        return {
            "att.visual.w_v": self.w_v, "att.visual.w_s": self.w_s, "att.visual.w_a": self.w_a,
            "att.concept.w_c": self.w_c, "att.concept.w_w": self.w_w, "att.concept.w_ac": self.w_ac,
            "att.late.w_late": self.w_late,
        }


def visual_attend(v, h_prev, params):
    """Attend over the k local region vectors given the previous sentence state.

    v: (k, d_v) Tensor, h_prev: (d_h_sent,) Tensor.
    Returns (v_att (d_v,), alpha (k,)).
    """
    if v.data.ndim != 2 or v.data.shape[0] < 1:
        raise ShapeError(f"visual_attend needs a non-empty (k, d_v) bank, got shape {v.data.shape}")
    k = v.data.shape[0]
    proj_v = ad.matmul(v, ad.transpose(params.w_v))            # (k, d_a)
    proj_h = ad.matmul(params.w_s, h_prev)                     # (d_a,)
    scores = ad.matmul(ad.tanh(ad.add_row(proj_v, proj_h)), ad.transpose(params.w_a))  # (k, 1)
    alpha = ad.softmax(ad.reshape(scores, (k,)))
    v_att = ad.matmul(alpha, v)                                # (d_v,)
    return v_att, alpha


def concept_attend(c, concept_probs, h_w_prev, params):
    """Attend over concept embeddings scaled by their predicted probabilities.

    c: (p, d_c) Tensor, concept_probs: (p,) Tensor, h_w_prev: (d_h_word,) Tensor.
    Returns (c_att (d_c,), alpha_c (p,)).
    """
    if c.data.ndim != 2 or c.data.shape[0] < 1:
        raise ConfigError(f"concept_attend needs at least one concept, got shape {c.data.shape}")
    p = c.data.shape[0]
    if concept_probs.data.shape != (p,):
        raise ShapeError(f"concept_probs shape {concept_probs.data.shape} does not match {p} concepts")
    ones_row = Tensor(np.ones((1, c.data.shape[1])))
    prob_tile = ad.matmul(ad.reshape(concept_probs, (p, 1)), ones_row)  # (p, d_c)
    scaled = ad.mul(prob_tile, c)
    proj_c = ad.matmul(scaled, params.w_c)                     # (p, d_ac)
    proj_h = ad.matmul(params.w_w, h_w_prev)                   # (d_ac,)
    scores = ad.matmul(ad.tanh(ad.add_row(proj_c, proj_h)), ad.transpose(params.w_ac))
    alpha = ad.softmax(ad.reshape(scores, (p,)))
    c_att = ad.matmul(alpha, c)                                # (d_c,)
    return c_att, alpha


def fuse(scheme, front, lat, h_prev, params, late_combine="project"):
    """Per-sentence-step context vector from the two encoder outputs.

    concat: both global features stitched together (2*d_v, no attention).
    early:  one attention pass over the stacked 2k-region bank (d_v).
    late:   per-view attention, then combine the two attended vectors (d_v).
    """
    if scheme == "concat":
        return ad.concat([front.global_feature, lat.global_feature])
    if scheme == "early":
        bank = ad.vstack([front.local_features, lat.local_features])
        v_att, _ = visual_attend(bank, h_prev, params)
        return v_att
    if scheme == "late":
        va_f, _ = visual_attend(front.local_features, h_prev, params)
        va_l, _ = visual_attend(lat.local_features, h_prev, params)
        if late_combine == "mean":
            return ad.scale(ad.add(va_f, va_l), 0.5)
        if late_combine == "project":
            return ad.matmul(params.w_late, ad.concat([va_f, va_l]))
        raise ValidationError(f"unknown late_combine '{late_combine}' (expected one of {LATE_COMBINES})")
    raise ValidationError(f"unknown fusion scheme '{scheme}' (expected one of {FUSION_SCHEMES})")


def context_dim(scheme, d_v):
    """Dimension of the vector fuse() produces under each scheme."""
    if scheme == "concat":
        return 2 * d_v
    if scheme in ("early", "late"):
        return d_v
    raise ValidationError(f"unknown fusion scheme '{scheme}' (expected one of {FUSION_SCHEMES})")
