"""Output heads: region pointer with sentinel, textual word head, and the
per-region plurality / sub-category classifiers, combined into one
distribution over the caption token space.

The token space factorizes as
    P(text word w)            = p_sentinel * p_txt(w)
    P(slot i, plural b, sc k) = p_regions(i) * p_plural(b | i) * p_subcat(k | i)
which sums to exactly 1 when every component is a probability vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import RegionSet
from .autodiff import ParameterSet, Tensor
from .rng import SeededRng


class FeedForward:
    """relu(W1 x + b1) followed by a bias-free linear map.

    No output bias, so all-negative pre-activations yield an exactly zero
    feature vector.
    """

    def __init__(self, params: ParameterSet, prefix: str, d_in: int, d_hidden: int,
                 d_out: int, rng: SeededRng):
        def u(shape, fan):
            return rng.uniform(shape, -1.0 / np.sqrt(fan), 1.0 / np.sqrt(fan))

        self.w1 = params.add(f"{prefix}.w1", u((d_hidden, d_in), d_in))
        self.b1 = params.add(f"{prefix}.b1", np.zeros(d_hidden))
        self.w2 = params.add(f"{prefix}.w2", u((d_out, d_hidden), d_hidden))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(self.w2, ad.relu(ad.add(ad.matmul(self.w1, x), self.b1)))


class HeadParams:
    """All output-head weights.

    w_h scores both region logits and the sentinel logit; w_z is likewise
    shared between the two (literal reading of the sentinel-augmented
    pointer softmax).
    """

    def __init__(self, params: ParameterSet, prefix: str, *, d: int, d_v: int, d_a: int,
                 vocab_size: int, n_subcat: int, d_u: int, d_r: int, rng: SeededRng):
        self.vocab_size = vocab_size
        self.n_subcat = n_subcat

        def u(shape, fan):
            return rng.uniform(shape, -1.0 / np.sqrt(fan), 1.0 / np.sqrt(fan))

        self.w_h = params.add(f"{prefix}.w_h", u((d_a,), d_a))
        self.w_v = params.add(f"{prefix}.w_v", u((d_a, d_v), d_v))
        self.w_z = params.add(f"{prefix}.w_z", u((d_a, d), d))
        self.w_s = params.add(f"{prefix}.w_s", u((d_a, d), d))
        self.w_q = params.add(f"{prefix}.w_q", u((vocab_size, d), d))
        self.w_p = params.add(f"{prefix}.w_p", u((2, d_r), d_r))
        self.w_sc = params.add(f"{prefix}.w_sc", u((d_u, d_r), d_r))
        self.u_emb = params.add(f"{prefix}.u_emb", u((n_subcat, d_u), d_u))
        self.r_b = FeedForward(params, f"{prefix}.r_b", d_v + d, d, d_r, rng)
        self.r_g = FeedForward(params, f"{prefix}.r_g", d_v + d, d, d_r, rng)


def pointing(v: Tensor, h_ctx: Tensor, params: HeadParams) -> Tensor:
    """Per-region pointer logits u_i = w_h . tanh(W_v v_i + W_z h)."""
    proj = ad.matmul(v, ad.transpose(params.w_v))          # (R, d_a)
    hid = ad.matmul(params.w_z, h_ctx)                     # (d_a,)
    return ad.matmul(ad.tanh(ad.add(proj, hid)), params.w_h)


def region_distribution(u: Tensor, s: Tensor, h_ctx: Tensor, params: HeadParams) -> Tensor:
    """(R+1)-way softmax over region logits plus the sentinel logit (last entry)."""
    sent_arg = ad.add(ad.matmul(params.w_s, s), ad.matmul(params.w_z, h_ctx))
    sent_logit = ad.matmul(ad.tanh(sent_arg), params.w_h)  # (1,) via vector dot
    return ad.softmax(ad.concat([u, sent_logit]))


def textual_distribution(mh: Tensor, params: HeadParams) -> Tensor:
    return ad.softmax(ad.matmul(params.w_q, mh))


def plurality(v_t: Tensor, h_ctx: Tensor, params: HeadParams) -> Tensor:
    """Singular/plural probabilities for the region with feature v_t."""
    return ad.softmax(ad.matmul(params.w_p, params.r_b(ad.concat([v_t, h_ctx]))))


def subcategory(v_t: Tensor, h_ctx: Tensor, params: HeadParams) -> Tensor:
    """Sub-category word probabilities for the region with feature v_t."""
    logits = ad.matmul(params.u_emb, ad.matmul(params.w_sc, params.r_g(ad.concat([v_t, h_ctx]))))
    return ad.softmax(logits)


@dataclass
class WordDistribution:
    """Joint step distribution over {text words} U {region slots}."""

    p_region_sentinel: Tensor        # (R+1,), sentinel last
    p_txt: Tensor                    # (S,)
    p_plural: list[Tensor]           # per region, each (2,)
    p_subcat: list[Tensor]           # per region, each (n_subcat,)

    @property
    def n_regions(self) -> int:
        return self.p_region_sentinel.shape[0] - 1

    @property
    def p_regions(self) -> np.ndarray:
        return self.p_region_sentinel.data[:-1]

    @property
    def p_sentinel(self) -> float:
        return float(self.p_region_sentinel.data[-1])

    def text_prob(self, word_id: int) -> float:
        return self.p_sentinel * float(self.p_txt.data[word_id])

    def slot_prob(self, region: int, plural: int, subcat: int) -> float:
        return (float(self.p_regions[region]) * float(self.p_plural[region].data[plural])
                * float(self.p_subcat[region].data[subcat]))

    def total_mass(self) -> float:
        """Exhaustive sum over the full joint token space."""
        mass = self.p_sentinel * float(self.p_txt.data.sum())
        for i in range(self.n_regions):
            mass += (float(self.p_regions[i]) * float(self.p_plural[i].data.sum())
                     * float(self.p_subcat[i].data.sum()))
        return mass


def combined_distribution(regions: RegionSet, h_ctx: Tensor, s: Tensor, mh: Tensor,
                          params: HeadParams) -> WordDistribution:
    """Run every head for one step and assemble the joint token distribution."""
    u = pointing(regions.v_tensor(), h_ctx, params)
    p_rs = region_distribution(u, s, h_ctx, params)
    p_txt = textual_distribution(mh, params)
    p_plural = []
    p_subcat = []
    for i in range(regions.count):
        v_i = ad.row(regions.v_tensor(), i)
        p_plural.append(plurality(v_i, h_ctx, params))
        p_subcat.append(subcategory(v_i, h_ctx, params))
    return WordDistribution(p_rs, p_txt, p_plural, p_subcat)
