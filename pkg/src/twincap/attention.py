"""Shared additive attention network and the decoder LSTM input assembly.

One attention network (score vector w_beta and hidden projection W_h) is
shared by both channels and by both feature sets; each feature set keeps its
own input projection because region features and pooled convolutional
features have different widths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .rng import SeededRng


@dataclass
class RegionSet:
    """Per-image region proposals: feature rows V, pooled conv rows Vbar, labels."""

    v: np.ndarray        # (R, d_v)
    vbar: np.ndarray     # (R, d_c)
    categories: list[int]
    subcats: list[int]
    plurals: list[int]
    _v_t: Tensor | None = field(default=None, repr=False, compare=False)
    _vbar_t: Tensor | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.vbar = np.asarray(self.vbar, dtype=np.float64)
        if self.v.ndim != 2 or self.vbar.ndim != 2:
            raise ValueError("region features must be 2-D matrices")
        if self.v.shape[0] < 1:
            raise ValueError("region set must contain at least one region")
        if self.v.shape[0] != self.vbar.shape[0]:
            raise ValueError(f"row count mismatch: V {self.v.shape} vs Vbar {self.vbar.shape}")

    @property
    def count(self) -> int:
        return self.v.shape[0]

    def v_tensor(self) -> Tensor:
        if self._v_t is None:
            self._v_t = Tensor(self.v)
        return self._v_t

    def vbar_tensor(self) -> Tensor:
        if self._vbar_t is None:
            self._vbar_t = Tensor(self.vbar)
        return self._vbar_t


class AttentionParams:
    """Additive attention weights, shared across channels and feature sets."""

    def __init__(self, params: ParameterSet, prefix: str, d_a: int, d_v: int, d_c: int,
                 d: int, rng: SeededRng):
        self.d_a = d_a

        def u(shape, fan):
            return rng.uniform(shape, -1.0 / np.sqrt(fan), 1.0 / np.sqrt(fan))

        self.w_beta = params.add(f"{prefix}.w_beta", u((d_a,), d_a))
        self.w_v = params.add(f"{prefix}.w_v", u((d_a, d_v), d_v))
        self.w_vbar = params.add(f"{prefix}.w_vbar", u((d_a, d_c), d_c))
        self.w_h = params.add(f"{prefix}.w_h", u((d_a, d), d))


def shared_input(embedding: Tensor, regions: RegionSet) -> Tensor:
    """Attention-LSTM input x_t: previous-token embedding + mean-pooled Vbar."""
    pooled = ad.mean_rows(regions.vbar_tensor())
    return ad.concat([embedding, pooled])


def attend(features: Tensor, h: Tensor, w_beta: Tensor, w_proj: Tensor,
           w_h: Tensor) -> tuple[Tensor, Tensor]:
    """Score each feature row against hidden state h.

    Logits are w_beta . (W_proj f_i + W_h h) per row; returns the softmax
    weights alpha over rows and the convex combination alpha^T features.
    """
    proj = ad.matmul(features, ad.transpose(w_proj))     # (R, d_a)
    hid = ad.matmul(w_h, h)                              # (d_a,) broadcast over rows
    beta = ad.matmul(ad.add(proj, hid), w_beta)          # (R,)
    alpha = ad.softmax(beta)
    attended = ad.matmul(ad.transpose(features), alpha)  # (d_f,)
    return alpha, attended


def attend_regions(regions: RegionSet, h: Tensor, params: AttentionParams
                   ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Run the shared network over both feature sets of one channel."""
    alpha_v, att_v = attend(regions.v_tensor(), h, params.w_beta, params.w_v, params.w_h)
    alpha_vbar, att_vbar = attend(regions.vbar_tensor(), h, params.w_beta, params.w_vbar, params.w_h)
    return alpha_v, att_v, alpha_vbar, att_vbar


def language_input(attended_v: Tensor, attended_vbar: Tensor, h_att: Tensor) -> Tensor:
    """Language-LSTM input: fixed layout so channel sums are element-wise valid."""
    return ad.concat([attended_v, attended_vbar, h_att])


def language_input_raw(alpha_v: Tensor, alpha_vbar: Tensor, h_att: Tensor,
                       max_regions: int) -> Tensor:
    """Ablation layout: raw attention weights, zero-padded to max_regions."""
    parts = []
    for alpha in (alpha_v, alpha_vbar):
        r = alpha.shape[0]
        if r > max_regions:
            raise ad.ShapeError(f"raw attention payload: {r} regions exceeds max_regions={max_regions}")
        if r < max_regions:
            alpha = ad.concat([alpha, Tensor(np.zeros(max_regions - r))])
        parts.append(alpha)
    parts.append(h_att)
    return ad.concat(parts)
