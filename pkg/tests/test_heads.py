import numpy as np
import pytest

from twincap.autodiff import ParameterSet, Tensor, finite_diff_check
import twincap.autodiff as ad
from twincap.heads import (HeadParams, combined_distribution, plurality, pointing,
                           region_distribution, subcategory, textual_distribution)
from twincap.rng import SeededRng

from helpers import random_regions
from oracles import heads_np


def make_heads(d=4, d_v=3, d_a=4, vocab=8, n_subcat=6, d_u=3, d_r=4, seed=0):
    ps = ParameterSet()
    hp = HeadParams(ps, "heads", d=d, d_v=d_v, d_a=d_a, vocab_size=vocab,
                    n_subcat=n_subcat, d_u=d_u, d_r=d_r, rng=SeededRng(seed))
    return hp, ps


def test_pointing_identical_rows_uniform():
    hp, _ = make_heads()
    rng = np.random.default_rng(0)
    row = rng.normal(size=3)
    u = pointing(Tensor(np.tile(row, (4, 1))), Tensor(rng.normal(size=4)), hp)
    p = ad.softmax(u).data
    assert np.allclose(p, 0.25, atol=1e-12)


def test_pointing_zero_projection():
    hp, _ = make_heads()
    hp.w_h.data[:] = 0.0
    rng = np.random.default_rng(1)
    u = pointing(Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=4)), hp)
    assert np.array_equal(u.data, np.zeros(3))
    assert np.allclose(ad.softmax(u).data, 1.0 / 3.0, atol=1e-15)


def test_pointing_matches_oracle_and_permutation():
    hp, _ = make_heads(seed=3)
    rng = np.random.default_rng(2)
    v = rng.normal(size=(4, 3))
    h = rng.normal(size=4)
    u = pointing(Tensor(v), Tensor(h), hp)
    expected = np.tanh(v @ hp.w_v.data.T + hp.w_z.data @ h) @ hp.w_h.data
    assert np.allclose(u.data, expected, atol=1e-14)
    perm = rng.permutation(4)
    u_p = pointing(Tensor(v[perm]), Tensor(h), hp)
    assert np.allclose(u_p.data, u.data[perm], atol=1e-14)


def test_region_distribution_sentinel_saturation():
    hp, _ = make_heads(d=2, d_a=1)
    # Push the sentinel logit to ~ +20.2 while region logits stay 0.
    hp.w_h.data[:] = 20.2
    hp.w_z.data[:] = 0.0
    hp.w_s.data[:] = 100.0
    u = Tensor(np.zeros(2))
    s = Tensor(np.ones(2))
    p = region_distribution(u, s, Tensor(np.zeros(2)), hp)
    assert p.data[-1] > 0.999


def test_region_distribution_uniform():
    hp, _ = make_heads()
    hp.w_h.data[:] = 0.0
    rng = np.random.default_rng(3)
    p = region_distribution(Tensor(np.zeros(3)), Tensor(rng.normal(size=4)),
                            Tensor(rng.normal(size=4)), hp)
    assert np.allclose(p.data, 1.0 / 4.0, atol=1e-15)


def test_region_distribution_matches_oracle():
    hp, ps = make_heads(seed=5)
    rng = np.random.default_rng(4)
    regions = random_regions(rng, 3)
    h = rng.normal(size=4)
    s = rng.normal(size=4)
    u = pointing(regions.v_tensor(), Tensor(h), hp)
    p = region_distribution(u, Tensor(s), Tensor(h), hp)
    ref = heads_np({p.name: p.data for p in ps}, regions, h, s, np.zeros(4))
    assert np.allclose(p.data, ref["p_rs"], atol=1e-14)


def test_textual_distribution():
    hp, _ = make_heads()
    hp.w_q.data[:] = 0.0
    p = textual_distribution(Tensor(np.ones(4)), hp)
    assert np.allclose(p.data, 1.0 / 8.0, atol=1e-15)
    hp.w_q.data[:] = 0.0
    hp.w_q.data[5, :] = 20.0
    p = textual_distribution(Tensor(np.ones(4) / 4.0), hp)
    assert p.data[5] > 0.999


def test_plurality_zero_weights():
    hp, _ = make_heads()
    hp.w_p.data[:] = 0.0
    rng = np.random.default_rng(5)
    p = plurality(Tensor(rng.normal(size=3)), Tensor(rng.normal(size=4)), hp)
    assert np.allclose(p.data, [0.5, 0.5], atol=1e-15)


def test_plurality_dead_relu():
    hp, _ = make_heads(seed=7)
    hp.r_b.w1.data[:] = 0.0
    hp.r_b.b1.data[:] = -1.0
    rng = np.random.default_rng(6)
    p = plurality(Tensor(rng.normal(size=3)), Tensor(rng.normal(size=4)), hp)
    assert np.allclose(p.data, [0.5, 0.5], atol=1e-15)


def test_subcategory_uniform_and_tied_rows():
    hp, _ = make_heads()
    hp.w_sc.data[:] = 0.0
    rng = np.random.default_rng(7)
    p = subcategory(Tensor(rng.normal(size=3)), Tensor(rng.normal(size=4)), hp)
    assert np.allclose(p.data, 1.0 / 6.0, atol=1e-15)
    hp, _ = make_heads(seed=8)
    hp.u_emb.data[2, :] = hp.u_emb.data[4, :]
    p = subcategory(Tensor(rng.normal(size=3)), Tensor(rng.normal(size=4)), hp)
    assert p.data[2] == pytest.approx(p.data[4], abs=1e-15)


def test_per_region_heads_match_oracle():
    hp, ps = make_heads(seed=9)
    rng = np.random.default_rng(8)
    regions = random_regions(rng, 3)
    h = rng.normal(size=4)
    ref = heads_np({p.name: p.data for p in ps}, regions, h, np.zeros(4), np.zeros(4))
    for i in range(3):
        v_i = Tensor(regions.v[i])
        assert np.allclose(plurality(v_i, Tensor(h), hp).data, ref["p_plural"][i], atol=1e-14)
        assert np.allclose(subcategory(v_i, Tensor(h), hp).data, ref["p_subcat"][i], atol=1e-14)


def test_combined_distribution_mass_and_extremes():
    hp, _ = make_heads(seed=10)
    rng = np.random.default_rng(9)
    regions = random_regions(rng, 3)
    dist = combined_distribution(regions, Tensor(rng.normal(size=4)),
                                 Tensor(rng.normal(size=4)),
                                 Tensor(rng.normal(size=4)), hp)
    assert dist.total_mass() == pytest.approx(1.0, abs=1e-9)
    # Force the sentinel to one: pure textual distribution.
    dist.p_region_sentinel.data[:] = 0.0
    dist.p_region_sentinel.data[-1] = 1.0
    text_mass = sum(dist.text_prob(w) for w in range(8))
    assert text_mass == pytest.approx(1.0, abs=1e-12)
    # Force the sentinel to zero: pure region mass.
    dist.p_region_sentinel.data[:] = 0.0
    dist.p_region_sentinel.data[0] = 1.0
    slot_mass = sum(dist.slot_prob(i, b, s)
                    for i in range(3) for b in (0, 1) for s in range(6))
    assert slot_mass == pytest.approx(1.0, abs=1e-12)


def test_head_outputs_are_probability_vectors():
    rng = np.random.default_rng(10)
    for i in range(25):
        hp, _ = make_heads(seed=200 + i)
        regions = random_regions(rng, int(rng.integers(1, 5)))
        dist = combined_distribution(regions, Tensor(rng.normal(size=4)),
                                     Tensor(rng.normal(size=4)),
                                     Tensor(rng.normal(size=4)), hp)
        for vec in [dist.p_region_sentinel.data, dist.p_txt.data,
                    *[t.data for t in dist.p_plural], *[t.data for t in dist.p_subcat]]:
            assert abs(vec.sum() - 1.0) < 1e-12
            assert (vec >= 0).all()


def test_finite_diff_through_every_head():
    hp, ps = make_heads(seed=11)
    rng = np.random.default_rng(11)
    regions = random_regions(rng, 2)
    h = Tensor(rng.normal(size=4))
    s = Tensor(rng.normal(size=4))
    mh = Tensor(rng.normal(size=4))

    def fn():
        dist = combined_distribution(regions, h, s, mh, hp)
        loss = ad.nll_pick(dist.p_region_sentinel, 0)
        loss = ad.add(loss, ad.nll_pick(dist.p_txt, 3))
        loss = ad.add(loss, ad.nll_pick(dist.p_plural[1], 1))
        loss = ad.add(loss, ad.nll_pick(dist.p_subcat[0], 2))
        return loss

    assert finite_diff_check(fn, list(ps)) < 1e-4
