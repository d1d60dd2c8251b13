import json
import os

import numpy as np
import pytest

from twincap import taskgen
from twincap.taskgen import (BOS_ID, EOS_ID, CategoryBank, GenConfig, SlotTok,
                             TextTok, generate, load_jsonl, save_jsonl,
                             split_examples)


def test_same_seed_byte_identical(tmp_path):
    cfg = GenConfig(n_examples=40)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_jsonl(generate(7, cfg), str(p1))
    save_jsonl(generate(7, cfg), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_different_seed_differs(tmp_path):
    cfg = GenConfig(n_examples=10)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_jsonl(generate(1, cfg), str(p1))
    save_jsonl(generate(2, cfg), str(p2))
    assert p1.read_bytes() != p2.read_bytes()


def test_zero_noise_features_equal_prototypes():
    cfg = GenConfig(n_examples=20, noise_scale=0.0)
    bank = CategoryBank(3, cfg)
    for ex in generate(3, cfg):
        for i in range(ex.regions.count):
            proto = bank.prototype(ex.regions.categories[i],
                                   ex.regions.subcats[i] % 3,
                                   ex.regions.plurals[i])
            assert np.array_equal(ex.regions.v[i], proto)
            assert np.array_equal(ex.regions.vbar[i],
                                  bank.conv_prototype(ex.regions.categories[i]))


def test_category_balance_two_categories():
    examples = generate(5, GenConfig(categories=2, n_examples=100))
    counts = [0, 0]
    for ex in examples:
        for tok in ex.tokens:
            if isinstance(tok, SlotTok):
                counts[CategoryBank.category_of(tok.subcat)] += 1
    total = sum(counts)
    for c in counts:
        assert abs(c / total - 0.5) <= 0.2 * 0.5  # within 20% of uniform


def test_example_invariants_bulk():
    examples = generate(11, GenConfig(n_examples=10_000))
    for ex in examples:
        r = ex.regions.count
        assert 2 <= r <= 6
        assert ex.tokens[0] == TextTok(BOS_ID)
        assert ex.tokens[-1] == TextTok(EOS_ID)
        for tok in ex.tokens:
            if isinstance(tok, SlotTok):
                assert 0 <= tok.region < r
                assert tok.subcat == ex.regions.subcats[tok.region]
                assert CategoryBank.category_of(tok.subcat) == ex.regions.categories[tok.region]
                assert tok.plural == ex.regions.plurals[tok.region]


def test_split_fractions_disjoint():
    examples = generate(2, GenConfig(n_examples=200))
    counts = {"train": 0, "val": 0, "test": 0}
    for ex in examples:
        counts[ex.split] += 1
    assert counts == {"train": 160, "val": 20, "test": 20}
    assert len(split_examples(examples, "train")) == 160


def test_roundtrip(tmp_path):
    examples = generate(9, GenConfig(n_examples=50))
    path = str(tmp_path / "d.jsonl")
    save_jsonl(examples, path)
    loaded = load_jsonl(path)
    assert len(loaded) == 50
    for a, b in zip(examples, loaded):
        assert a.tokens == b.tokens
        assert np.array_equal(a.regions.v, b.regions.v)
        assert np.array_equal(a.regions.vbar, b.regions.vbar)
        assert a.regions.subcats == b.regions.subcats
        assert a.split == b.split


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_jsonl(str(path)) == []


def test_truncated_line_error(tmp_path):
    examples = generate(1, GenConfig(n_examples=2))
    path = tmp_path / "bad.jsonl"
    good = json.dumps(taskgen.example_to_dict(examples[0]))
    path.write_text(good + "\n" + good[: len(good) // 2] + "\n")
    with pytest.raises(ValueError, match="line 2"):
        load_jsonl(str(path))


def test_missing_field_error(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"tokens": []}) + "\n")
    with pytest.raises(ValueError, match="regions"):
        load_jsonl(str(path))


def test_oversized_grammar_rejected():
    seven_slots = [["a"] + [taskgen.SINGULAR] * 7]
    with pytest.raises(ValueError, match="slots"):
        generate(0, GenConfig(templates=seven_slots))


def test_unknown_template_word_rejected():
    with pytest.raises(ValueError, match="vocabulary"):
        generate(0, GenConfig(templates=[["zebra", taskgen.SINGULAR]]))


def test_category_bounds():
    with pytest.raises(ValueError):
        CategoryBank(0, GenConfig(categories=1))
    with pytest.raises(ValueError):
        CategoryBank(0, GenConfig(categories=7))


def test_prototype_separation():
    cfg = GenConfig(noise_scale=0.1)
    bank = CategoryBank(4, cfg)
    protos = bank.proto_v
    for i in range(len(protos)):
        for j in range(i + 1, len(protos)):
            assert np.linalg.norm(protos[i] - protos[j]) > 4 * cfg.noise_scale


def test_surface_forms():
    assert CategoryBank.surface(0, 0) == "cat"
    assert CategoryBank.surface(0, 1) == "cats"
    with pytest.raises(ValueError, match="unknown"):
        CategoryBank.surface(99, 0)
