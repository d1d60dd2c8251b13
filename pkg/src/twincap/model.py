"""Full captioner: token embeddings, a decoder (twin or baseline), and the
grounding heads, sharing one parameter set.

Slot tokens are embedded through the sub-category embedding matrix of the
heads (one semantic space for sub-category words), so the embedding width and
the sub-category embedding width are the same knob.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from . import autodiff as ad
from .attention import RegionSet
from .autodiff import ParameterSet, Tensor
from .decoder import (BaselineDecoder, BaselineState, BaselineStepOutput, DecoderState,
                      MetaConfig, StepOutput, TwinDecoder)
from .heads import HeadParams, WordDistribution, combined_distribution
from .rng import SeededRng
from .taskgen import N_SUBCATS, TEXT_WORDS, SlotTok, TextTok


@dataclass
class ModelConfig:
    kind: str = "ntt"                  # "ntt" | "baseline"
    d: int = 32
    d_e: int = 16
    d_v: int = 16
    d_c: int = 16
    d_a: int = 0                       # 0 -> d
    d_r: int = 0                       # 0 -> d
    vocab_size: int = len(TEXT_WORDS)
    n_subcat: int = N_SUBCATS
    dropout_left: float = 0.3
    dropout_right: float = 0.7
    dropout_joint: float = 0.8
    dropout_mh: float = 0.5
    payload: str = "attended"          # "attended" | "raw"
    channels: int = 2
    max_regions: int = 6
    max_len: int = 32
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ntt", "baseline"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "ntt" and self.channels != 2:
            raise ValueError(f"the twin decoder supports exactly 2 attention channels, got {self.channels}")
        if self.d_a == 0:
            self.d_a = self.d
        if self.d_r == 0:
            self.d_r = self.d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class CaptionModel:
    """Embeddings + decoder + heads behind a single step interface."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.params = ParameterSet()
        rng = SeededRng(cfg.init_seed)
        bound = 1.0 / np.sqrt(cfg.d_e)
        self.embedding = self.params.add(
            "embed.words", rng.uniform((cfg.vocab_size, cfg.d_e), -bound, bound))
        kw = dict(d=cfg.d, d_e=cfg.d_e, d_v=cfg.d_v, d_c=cfg.d_c, d_a=cfg.d_a, rng=rng,
                  payload=cfg.payload, max_regions=cfg.max_regions, max_len=cfg.max_len)
        if cfg.kind == "ntt":
            self.decoder: Union[TwinDecoder, BaselineDecoder] = TwinDecoder(
                self.params, "decoder", **kw)
        else:
            self.decoder = BaselineDecoder(self.params, "decoder", **kw)
        self.heads = HeadParams(self.params, "heads", d=cfg.d, d_v=cfg.d_v, d_a=cfg.d_a,
                                vocab_size=cfg.vocab_size, n_subcat=cfg.n_subcat,
                                d_u=cfg.d_e, d_r=cfg.d_r, rng=rng)
        self.meta = MetaConfig(rate_left=cfg.dropout_left, rate_right=cfg.dropout_right,
                               rate_joint=cfg.dropout_joint, rate_mh=cfg.dropout_mh,
                               train=False)

    def embed_token(self, tok) -> Tensor:
        if isinstance(tok, TextTok):
            return ad.row(self.embedding, tok.id)
        if isinstance(tok, SlotTok):
            return ad.row(self.heads.u_emb, tok.subcat)
        raise TypeError(f"cannot embed token {tok!r}")

    def init_state(self):
        return self.decoder.init_state()

    def step(self, state, prev_tok, regions: RegionSet, train: bool = False,
             rng: SeededRng | None = None):
        """One decode step; returns (distribution, raw step output, new state)."""
        emb = self.embed_token(prev_tok)
        if isinstance(self.decoder, TwinDecoder):
            meta = MetaConfig(rate_left=self.meta.rate_left, rate_right=self.meta.rate_right,
                              rate_joint=self.meta.rate_joint, rate_mh=self.meta.rate_mh,
                              train=train)
            out: StepOutput = self.decoder.step(state, emb, regions, meta, rng)
            h_ctx = out.state.joint.h
            dist = combined_distribution(regions, h_ctx, out.s, out.mh, self.heads)
            return dist, out, out.state
        out_b: BaselineStepOutput = self.decoder.step(state, emb, regions)
        dist = combined_distribution(regions, out_b.h, out_b.s, out_b.h, self.heads)
        return dist, out_b, out_b.state

    def param_count(self) -> int:
        return self.params.count()

    def decoder_param_count(self) -> int:
        return sum(p.data.size for p in self.params if p.name.startswith("decoder."))


def build_model(cfg: ModelConfig) -> CaptionModel:
    return CaptionModel(cfg)


def parameter_overhead(ntt: CaptionModel, baseline: CaptionModel) -> dict:
    """Size comparison of the two decoders; reported, not bounded."""
    n, b = ntt.param_count(), baseline.param_count()
    nd, bd = ntt.decoder_param_count(), baseline.decoder_param_count()
    return {
        "ntt_params": n,
        "baseline_params": b,
        "total_overhead": n / b - 1.0,
        "ntt_decoder_params": nd,
        "baseline_decoder_params": bd,
        "decoder_overhead": nd / bd - 1.0,
    }
