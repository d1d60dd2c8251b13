import numpy as np
import pytest

import twincap.autodiff as ad
from twincap.attention import (AttentionParams, RegionSet, attend, language_input,
                               language_input_raw, shared_input)
from twincap.autodiff import ParameterSet, Tensor
from twincap.rng import SeededRng

from helpers import random_regions
from oracles import attend_np


def make_params(d_a=4, d_v=3, d_c=3, d=4, seed=0):
    ps = ParameterSet()
    return AttentionParams(ps, "attn", d_a, d_v, d_c, d, SeededRng(seed)), ps


def test_shared_input_single_region():
    rng = np.random.default_rng(0)
    regions = random_regions(rng, 1)
    emb = rng.normal(size=3)
    out = shared_input(Tensor(emb), regions)
    assert np.allclose(out.data, np.concatenate([emb, regions.vbar[0]]), atol=1e-15)


def test_shared_input_mean_idempotent():
    rng = np.random.default_rng(1)
    row = rng.normal(size=3)
    regions = RegionSet(v=rng.normal(size=(2, 3)), vbar=np.stack([row, row]),
                        categories=[0, 0], subcats=[0, 0], plurals=[0, 0])
    emb = rng.normal(size=3)
    out = shared_input(Tensor(emb), regions)
    assert np.allclose(out.data[3:], row, atol=1e-15)


def test_shared_input_mean_oracle():
    rng = np.random.default_rng(2)
    regions = random_regions(rng, 3)
    emb = rng.normal(size=3)
    out = shared_input(Tensor(emb), regions)
    assert np.allclose(out.data[3:], regions.vbar.mean(axis=0), atol=1e-15)


def test_empty_region_set_rejected():
    with pytest.raises(ValueError, match="at least one region"):
        RegionSet(v=np.zeros((0, 3)), vbar=np.zeros((0, 3)), categories=[],
                  subcats=[], plurals=[])


def test_attend_identical_rows():
    params, _ = make_params()
    rng = np.random.default_rng(3)
    row = rng.normal(size=3)
    feats = Tensor(np.tile(row, (4, 1)))
    h = Tensor(rng.normal(size=4))
    alpha, attended = attend(feats, h, params.w_beta, params.w_v, params.w_h)
    assert np.allclose(alpha.data, 0.25, atol=1e-12)
    assert np.allclose(attended.data, row, atol=1e-12)


def test_attend_single_row():
    params, _ = make_params()
    rng = np.random.default_rng(4)
    row = rng.normal(size=3)
    alpha, attended = attend(Tensor(row.reshape(1, 3)), Tensor(rng.normal(size=4)),
                             params.w_beta, params.w_v, params.w_h)
    assert np.array_equal(alpha.data, [1.0])
    assert np.allclose(attended.data, row, atol=1e-15)


def test_attend_matches_oracle():
    params, _ = make_params(seed=9)
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(3, 3))
    h = rng.normal(size=4)
    alpha, attended = attend(Tensor(feats), Tensor(h), params.w_beta, params.w_v,
                             params.w_h)
    a_exp, f_exp = attend_np(feats, h, params.w_beta.data, params.w_v.data,
                             params.w_h.data)
    assert np.allclose(alpha.data, a_exp, atol=1e-14)
    assert np.allclose(attended.data, f_exp, atol=1e-14)


def test_alpha_probability_vector():
    params, _ = make_params(seed=1)
    rng = np.random.default_rng(6)
    for _ in range(30):
        feats = Tensor(rng.normal(scale=4.0, size=(5, 3)))
        h = Tensor(rng.normal(size=4))
        alpha, _ = attend(feats, h, params.w_beta, params.w_v, params.w_h)
        assert abs(alpha.data.sum() - 1.0) < 1e-12
        assert (alpha.data > 0).all()


def test_attention_permutation_equivariance():
    params, _ = make_params(seed=2)
    rng = np.random.default_rng(7)
    feats = rng.normal(size=(5, 3))
    h = Tensor(rng.normal(size=4))
    perm = rng.permutation(5)
    alpha, attended = attend(Tensor(feats), h, params.w_beta, params.w_v, params.w_h)
    alpha_p, attended_p = attend(Tensor(feats[perm]), h, params.w_beta, params.w_v,
                                 params.w_h)
    assert np.allclose(alpha_p.data, alpha.data[perm], atol=1e-14)
    assert np.allclose(attended_p.data, attended.data, atol=1e-14)


def test_language_input_zeros():
    out = language_input(Tensor(np.zeros(3)), Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros(10))


def test_language_input_channel_symmetry():
    rng = np.random.default_rng(8)
    args = [Tensor(rng.normal(size=n)) for n in (3, 3, 4)]
    a = language_input(*args)
    b = language_input(*args)
    assert np.array_equal(a.data, b.data)


def test_language_input_split_roundtrip():
    rng = np.random.default_rng(9)
    att_v, att_vbar, h = rng.normal(size=3), rng.normal(size=3), rng.normal(size=4)
    out = language_input(Tensor(att_v), Tensor(att_vbar), Tensor(h)).data
    assert np.array_equal(out[:3], att_v)
    assert np.array_equal(out[3:6], att_vbar)
    assert np.array_equal(out[6:], h)


def test_raw_payload_padding():
    rng = np.random.default_rng(10)
    alpha = Tensor(np.array([0.25, 0.75]))
    h = Tensor(rng.normal(size=4))
    out = language_input_raw(alpha, alpha, h, max_regions=4)
    assert out.shape == (12,)
    assert np.array_equal(out.data[:2], [0.25, 0.75])
    assert np.array_equal(out.data[2:4], [0.0, 0.0])
    with pytest.raises(ad.ShapeError, match="max_regions"):
        language_input_raw(Tensor(np.ones(5) / 5), alpha, h, max_regions=4)
