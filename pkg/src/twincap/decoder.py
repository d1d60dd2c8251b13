"""Twin cascaded-attention decoder step and the single-channel baseline.

Wiring per step of the twin decoder: the two attention LSTMs carry their own
state across time; each language LSTM is re-seeded from its channel's
attention-LSTM (h, c) at every step, and the joint LSTM is re-seeded from the
element-wise sums of the language-LSTM states (contexts gated by the cascade)
rather than carrying state of its own. Only the previous joint hypothesis
survives between steps, feeding the sentinel gate.

Cascade order: g1 gates the left language context, g2 (which absorbs g1)
gates the right one, and g3 (which absorbs g2, computed from the gated
contexts) gates the assembled joint context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import (AttentionParams, RegionSet, attend_regions, language_input,
                        language_input_raw, shared_input)
from .autodiff import ParameterSet, Tensor
from .lstm import LstmCell, LstmState
from .rng import SeededRng


@dataclass
class MetaConfig:
    """Dropout rates of the meta-hypothesis ensemble and the train switch."""
    rate_left: float = 0.3
    rate_right: float = 0.7
    rate_joint: float = 0.8
    rate_mh: float = 0.5
    train: bool = False

    def __post_init__(self):
        for r in (self.rate_left, self.rate_right, self.rate_joint, self.rate_mh):
            if not (0.0 <= r < 1.0):
                raise ValueError(f"dropout rate {r} outside [0, 1)")


@dataclass
class DecoderState:
    """Five (h, c) pairs plus the previous-step joint hypothesis."""
    att_l: LstmState
    lang_l: LstmState
    att_r: LstmState
    lang_r: LstmState
    joint: LstmState
    h_joint_prev: Tensor
    t: int = 0


@dataclass
class StepOutput:
    mh: Tensor
    s: Tensor
    g1: Tensor
    g2: Tensor
    g3: Tensor
    state: DecoderState
    alphas: dict[str, Tensor] = field(default_factory=dict)
    in1: Tensor | None = None
    in2: Tensor | None = None
    in3: Tensor | None = None


class GateParams:
    """Square weight matrices of the three cascaded adaptive gates."""

    def __init__(self, params: ParameterSet, prefix: str, d: int, rng: SeededRng):
        bound = 1.0 / np.sqrt(d)
        self.w1 = params.add(f"{prefix}.w1", rng.uniform((d, d), -bound, bound))
        self.w2 = params.add(f"{prefix}.w2", rng.uniform((d, d), -bound, bound))
        self.w3 = params.add(f"{prefix}.w3", rng.uniform((d, d), -bound, bound))


class SentinelParams:
    """Gate weights for the visual sentinel; w_h here is independent of the
    attention network's hidden projection."""

    def __init__(self, params: ParameterSet, prefix: str, d: int, d_x: int, rng: SeededRng):
        self.w_x = params.add(f"{prefix}.w_x",
                              rng.uniform((d, d_x), -1.0 / np.sqrt(d_x), 1.0 / np.sqrt(d_x)))
        self.w_h = params.add(f"{prefix}.w_h",
                              rng.uniform((d, d), -1.0 / np.sqrt(d), 1.0 / np.sqrt(d)))


def cascade_gates(h1: Tensor, c1: Tensor, h3: Tensor, c3: Tensor,
                  h2: Tensor, c2: Tensor, h4: Tensor, c4: Tensor,
                  params: GateParams) -> tuple[Tensor, Tensor, Tensor]:
    """Compute g1, g2, g3 from pre-gating states; g3 sees the gated contexts."""
    shapes = {t.shape for t in (h1, c1, h3, c3, h2, c2, h4, c4)}
    if len(shapes) != 1:
        raise ad.ShapeError(f"cascade_gates: mixed state shapes {sorted(shapes)}")
    g1 = ad.sigmoid(ad.matmul(params.w1, ad.add(h1, c1)))
    c2_gated = ad.mul(g1, c2)
    g2 = ad.add(ad.sigmoid(ad.matmul(params.w2, ad.add(h3, c3))), g1)
    c4_gated = ad.mul(g2, c4)
    arg3 = ad.add(ad.add(h2, c2_gated), ad.add(h4, c4_gated))
    g3 = ad.add(ad.sigmoid(ad.matmul(params.w3, arg3)), g2)
    return g1, g2, g3


def apply_gates(c2: Tensor, c4: Tensor, c5: Tensor,
                g1: Tensor, g2: Tensor, g3: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Gate each context vector element-wise."""
    return ad.mul(g1, c2), ad.mul(g2, c4), ad.mul(g3, c5)


def joint_assembly(h2: Tensor, c2_gated: Tensor, h4: Tensor, c4_gated: Tensor,
                   in1: Tensor, in2: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Element-wise sums building the joint LSTM's seed state and input."""
    if in1.shape != in2.shape:
        raise ad.ShapeError(f"joint_assembly: channel inputs {in1.shape} vs {in2.shape}")
    h5_in = ad.add(h2, h4)
    c5_in = ad.add(c2_gated, c4_gated)
    in3 = ad.add(in2, in1)
    return h5_in, c5_in, in3


def sentinel(x_t: Tensor, h_prev: Tensor, c_cur: Tensor, params: SentinelParams) -> Tensor:
    """Visual sentinel s_t = sigma(W_x x_t + W_h h_prev) * tanh(c_t)."""
    gate = ad.sigmoid(ad.add(ad.matmul(params.w_x, x_t), ad.matmul(params.w_h, h_prev)))
    return ad.mul(gate, ad.tanh(c_cur))


def dropout(x: Tensor, rate: float, rng: SeededRng) -> Tensor:
    """Inverted dropout: scale survivors by 1/(1-rate); rate 0 is the identity."""
    if rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = rng.bernoulli(keep, x.shape) / keep
    return ad.dropout_mask(x, mask)


def meta_hypothesis(h2: Tensor, h4: Tensor, h5: Tensor, cfg: MetaConfig,
                    rng: SeededRng | None = None) -> Tensor:
    """Dropout-regularized sum of the three language hypotheses.

    At inference this is exactly h2 + h4 + h5; at train time fresh masks are
    drawn per call and the inverted convention keeps the expectation equal to
    the inference value.
    """
    if cfg.train:
        if rng is None:
            raise ValueError("meta_hypothesis: train mode requires an rng")
        mh = ad.add(ad.add(dropout(h2, cfg.rate_left, rng), dropout(h4, cfg.rate_right, rng)),
                    dropout(h5, cfg.rate_joint, rng))
        return dropout(mh, cfg.rate_mh, rng)
    return ad.add(ad.add(h2, h4), h5)


class TwinDecoder:
    """Two attention channels joined through cascaded gates and a joint LSTM."""

    def __init__(self, params: ParameterSet, prefix: str, *, d: int, d_e: int, d_v: int,
                 d_c: int, d_a: int, rng: SeededRng, payload: str = "attended",
                 max_regions: int = 6, max_len: int = 64):
        if payload not in ("attended", "raw"):
            raise ValueError(f"unknown attention payload {payload!r}")
        self.d = d
        self.payload = payload
        self.max_regions = max_regions
        self.max_len = max_len
        d_x = d_e + d_c
        lang_in = (d_v + d_c + d) if payload == "attended" else (2 * max_regions + d)
        self.att_l = LstmCell(params, f"{prefix}.att_l", d_x, d, rng)
        self.lang_l = LstmCell(params, f"{prefix}.lang_l", lang_in, d, rng)
        self.att_r = LstmCell(params, f"{prefix}.att_r", d_x, d, rng)
        self.lang_r = LstmCell(params, f"{prefix}.lang_r", lang_in, d, rng)
        self.joint = LstmCell(params, f"{prefix}.joint", lang_in, d, rng)
        self.attention = AttentionParams(params, f"{prefix}.attn", d_a, d_v, d_c, d, rng)
        self.gates = GateParams(params, f"{prefix}.gates", d, rng)
        self.sentinel = SentinelParams(params, f"{prefix}.sentinel", d, d_x, rng)

    def init_state(self) -> DecoderState:
        return DecoderState(
            att_l=self.att_l.zero_state(), lang_l=self.lang_l.zero_state(),
            att_r=self.att_r.zero_state(), lang_r=self.lang_r.zero_state(),
            joint=self.joint.zero_state(), h_joint_prev=Tensor(np.zeros(self.d)), t=0)

    def _language_input(self, alpha_v, att_v, alpha_vbar, att_vbar, h_att) -> Tensor:
        if self.payload == "raw":
            return language_input_raw(alpha_v, alpha_vbar, h_att, self.max_regions)
        return language_input(att_v, att_vbar, h_att)

    def step(self, state: DecoderState, prev_embedding: Tensor, regions: RegionSet,
             meta: MetaConfig, rng: SeededRng | None = None) -> StepOutput:
        if state.t >= self.max_len:
            raise ValueError(f"decoder step {state.t} exceeds max length {self.max_len}")
        x_t = shared_input(prev_embedding, regions)

        att_l = self.att_l.step(x_t, state.att_l)
        att_r = self.att_r.step(x_t, state.att_r)

        a_v_l, f_v_l, a_vb_l, f_vb_l = attend_regions(regions, att_l.h, self.attention)
        a_v_r, f_v_r, a_vb_r, f_vb_r = attend_regions(regions, att_r.h, self.attention)

        in1 = self._language_input(a_v_l, f_v_l, a_vb_l, f_vb_l, att_l.h)
        in2 = self._language_input(a_v_r, f_v_r, a_vb_r, f_vb_r, att_r.h)

        # Language LSTMs are seeded from their attention LSTM, not carried.
        lang_l = self.lang_l.step(in1, LstmState(att_l.h, att_l.c))
        lang_r = self.lang_r.step(in2, LstmState(att_r.h, att_r.c))

        g1 = ad.sigmoid(ad.matmul(self.gates.w1, ad.add(att_l.h, att_l.c)))
        c2_gated = ad.mul(g1, lang_l.c)
        g2 = ad.add(ad.sigmoid(ad.matmul(self.gates.w2, ad.add(att_r.h, att_r.c))), g1)
        c4_gated = ad.mul(g2, lang_r.c)

        h5_in, c5_in, in3 = joint_assembly(lang_l.h, c2_gated, lang_r.h, c4_gated, in1, in2)
        arg3 = ad.add(ad.add(lang_l.h, c2_gated), ad.add(lang_r.h, c4_gated))
        g3 = ad.add(ad.sigmoid(ad.matmul(self.gates.w3, arg3)), g2)
        c5_gated = ad.mul(g3, c5_in)

        joint = self.joint.step(in3, LstmState(h5_in, c5_gated))
        s_t = sentinel(x_t, state.h_joint_prev, joint.c, self.sentinel)
        mh = meta_hypothesis(lang_l.h, lang_r.h, joint.h, meta, rng)

        new_state = DecoderState(att_l=att_l, lang_l=lang_l, att_r=att_r, lang_r=lang_r,
                                 joint=joint, h_joint_prev=joint.h, t=state.t + 1)
        alphas = {"alpha_v_l": a_v_l, "alpha_vbar_l": a_vb_l,
                  "alpha_v_r": a_v_r, "alpha_vbar_r": a_vb_r}
        return StepOutput(mh=mh, s=s_t, g1=g1, g2=g2, g3=g3, state=new_state,
                          alphas=alphas, in1=in1, in2=in2, in3=in3)


@dataclass
class BaselineState:
    att: LstmState
    lang: LstmState
    t: int = 0


@dataclass
class BaselineStepOutput:
    h: Tensor
    c: Tensor
    s: Tensor
    state: BaselineState
    alphas: dict[str, Tensor] = field(default_factory=dict)


class BaselineDecoder:
    """Single attention channel, language LSTM with its own carried state."""

    def __init__(self, params: ParameterSet, prefix: str, *, d: int, d_e: int, d_v: int,
                 d_c: int, d_a: int, rng: SeededRng, payload: str = "attended",
                 max_regions: int = 6, max_len: int = 64):
        if payload not in ("attended", "raw"):
            raise ValueError(f"unknown attention payload {payload!r}")
        self.d = d
        self.payload = payload
        self.max_regions = max_regions
        self.max_len = max_len
        d_x = d_e + d_c
        lang_in = (d_v + d_c + d) if payload == "attended" else (2 * max_regions + d)
        self.att = LstmCell(params, f"{prefix}.att", d_x, d, rng)
        self.lang = LstmCell(params, f"{prefix}.lang", lang_in, d, rng)
        self.attention = AttentionParams(params, f"{prefix}.attn", d_a, d_v, d_c, d, rng)
        self.sentinel = SentinelParams(params, f"{prefix}.sentinel", d, d_x, rng)

    def init_state(self) -> BaselineState:
        return BaselineState(att=self.att.zero_state(), lang=self.lang.zero_state(), t=0)

    def step(self, state: BaselineState, prev_embedding: Tensor,
             regions: RegionSet) -> BaselineStepOutput:
        if state.t >= self.max_len:
            raise ValueError(f"decoder step {state.t} exceeds max length {self.max_len}")
        x_t = shared_input(prev_embedding, regions)
        att = self.att.step(x_t, state.att)
        a_v, f_v, a_vb, f_vb = attend_regions(regions, att.h, self.attention)
        if self.payload == "raw":
            lang_in = language_input_raw(a_v, a_vb, att.h, self.max_regions)
        else:
            lang_in = language_input(f_v, f_vb, att.h)
        h_prev = state.lang.h
        lang = self.lang.step(lang_in, state.lang)
        s_t = sentinel(x_t, h_prev, lang.c, self.sentinel)
        new_state = BaselineState(att=att, lang=lang, t=state.t + 1)
        return BaselineStepOutput(h=lang.h, c=lang.c, s=s_t, state=new_state,
                                  alphas={"alpha_v": a_v, "alpha_vbar": a_vb})
