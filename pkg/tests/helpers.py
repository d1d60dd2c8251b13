"""Shared construction helpers for the test suite."""

import numpy as np

from twincap.attention import RegionSet
from twincap.model import CaptionModel, ModelConfig, build_model
from twincap.taskgen import Example, SlotTok, TextTok


def tiny_config(kind="ntt", seed=0, **overrides) -> ModelConfig:
    base = dict(kind=kind, d=4, d_e=3, d_v=3, d_c=3, vocab_size=8, n_subcat=6,
                max_len=64, init_seed=seed)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(kind="ntt", seed=0, **overrides) -> CaptionModel:
    return build_model(tiny_config(kind, seed, **overrides))


def random_regions(rng: np.random.Generator, n: int, d_v: int = 3, d_c: int = 3,
                   n_subcat: int = 6) -> RegionSet:
    subcats = [int(rng.integers(0, n_subcat)) for _ in range(n)]
    return RegionSet(v=rng.normal(size=(n, d_v)), vbar=rng.normal(size=(n, d_c)),
                     categories=[s // 3 for s in subcats], subcats=subcats,
                     plurals=[int(rng.integers(0, 2)) for _ in range(n)])


def tiny_example(rng: np.random.Generator, model: CaptionModel, n_regions: int = 2,
                 n_steps: int = 3) -> Example:
    """BOS-led token sequence mixing text and slot targets."""
    regions = random_regions(rng, n_regions, model.cfg.d_v, model.cfg.d_c,
                             model.cfg.n_subcat)
    tokens = [TextTok(0)]
    for t in range(n_steps):
        if t % 2 == 1:
            r = int(rng.integers(0, n_regions))
            tokens.append(SlotTok(region=r, subcat=regions.subcats[r],
                                  plural=regions.plurals[r]))
        else:
            tokens.append(TextTok(int(rng.integers(0, model.cfg.vocab_size))))
    return Example(regions=regions, tokens=tokens)


def tie_channels(model: CaptionModel) -> None:
    """Copy left-channel LSTM weights onto the right channel."""
    for left, right in (("att_l", "att_r"), ("lang_l", "lang_r")):
        for leaf in ("w_x", "w_h", "b"):
            src = model.params[f"decoder.{left}.{leaf}"]
            dst = model.params[f"decoder.{right}.{leaf}"]
            dst.data[:] = src.data


def zero_params(model: CaptionModel) -> None:
    for p in model.params:
        p.data[:] = 0.0
