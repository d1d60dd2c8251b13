"""Synthetic grounded-captioning task: labeled region features plus template
captions whose slots point at regions.

Word tables are module constants so that model shapes (textual vocab,
sub-category vocab) never depend on generation settings; the generation seed
only controls prototypes, noise, and sampling. Captions come from a small
template grammar; a slot's plurality always matches both the surface form at
that template position and the region's plurality label, and region features
carry deterministic sub-category and plurality offsets so the per-region
heads are learnable from features alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attention import RegionSet
from .rng import SeededRng

# Textual vocabulary; ids are positions. BOS/EOS are ordinary word ids.
TEXT_WORDS = [
    "<bos>", "<eos>", "a", "the", "two", "some", "there", "is", "are", "and",
    "next", "to", "on", "under", "near", "beside", "by", "with", "sits",
    "stands", "rests", "one", "small", "big", "old", "new", "red", "blue",
    "green", "another",
]
BOS_ID = 0
EOS_ID = 1
WORD_ID = {w: i for i, w in enumerate(TEXT_WORDS)}

# category name -> three (singular, plural) sub-category surface forms.
CATEGORY_TABLE = [
    ("animal", [("cat", "cats"), ("dog", "dogs"), ("bird", "birds")]),
    ("furniture", [("chair", "chairs"), ("table", "tables"), ("sofa", "sofas")]),
    ("food", [("apple", "apples"), ("pizza", "pizzas"), ("cake", "cakes")]),
    ("vehicle", [("car", "cars"), ("bus", "buses"), ("bike", "bikes")]),
    ("plant", [("tree", "trees"), ("flower", "flowers"), ("bush", "bushes")]),
    ("tool", [("hammer", "hammers"), ("saw", "saws"), ("drill", "drills")]),
]
SUBCATS_PER_CATEGORY = 3
N_CATEGORIES_MAX = len(CATEGORY_TABLE)
N_SUBCATS = N_CATEGORIES_MAX * SUBCATS_PER_CATEGORY
SUBCAT_WORDS = [forms for _, subs in CATEGORY_TABLE for forms in subs]

# Template grammar: strings are textual words, (plural,) markers are slots.
SINGULAR = ("slot", 0)
PLURAL = ("slot", 1)
DEFAULT_TEMPLATES: list[list] = [
    ["a", SINGULAR, "next", "to", "a", SINGULAR],
    ["the", SINGULAR, "on", "the", SINGULAR],
    ["two", PLURAL, "near", "a", SINGULAR],
    ["some", PLURAL, "under", "the", SINGULAR],
    ["there", "is", "a", SINGULAR, "by", "the", SINGULAR],
    ["a", "small", SINGULAR, "and", "a", "big", SINGULAR],
    ["two", PLURAL, "beside", "two", PLURAL],
    ["a", SINGULAR, "sits", "on", "the", SINGULAR],
    ["the", SINGULAR, "stands", "near", "the", SINGULAR],
    ["a", SINGULAR],
    ["there", "are", "two", PLURAL, "on", "a", SINGULAR],
    ["a", SINGULAR, "with", "a", SINGULAR, "and", "a", SINGULAR],
]

SUBCAT_OFFSET_SCALE = 0.6
PLURAL_OFFSET_SCALE = 0.5


@dataclass(frozen=True)
class TextTok:
    id: int


@dataclass(frozen=True)
class SlotTok:
    region: int
    subcat: int
    plural: int


Token = TextTok | SlotTok


@dataclass
class Example:
    regions: RegionSet
    tokens: list
    split: str = "train"


@dataclass
class GenConfig:
    categories: int = 6
    n_examples: int = 100
    noise_scale: float = 0.1
    d_v: int = 16
    d_c: int = 16
    min_regions: int = 2
    max_regions: int = 6
    templates: list = field(default_factory=lambda: DEFAULT_TEMPLATES)


class CategoryBank:
    """Per-category prototypes plus the shared sub-category/plurality offsets."""

    def __init__(self, seed: int, cfg: GenConfig):
        if cfg.categories < 2:
            raise ValueError("need at least 2 categories")
        if cfg.categories > N_CATEGORIES_MAX:
            raise ValueError(f"at most {N_CATEGORIES_MAX} categories available")
        self.categories = cfg.categories
        self.noise_scale = cfg.noise_scale
        rng = SeededRng(seed)
        min_dist = 4.0 * cfg.noise_scale
        self.proto_v = _distinct_unit_vectors(rng, cfg.categories, cfg.d_v, min_dist)
        self.proto_c = _distinct_unit_vectors(rng, cfg.categories, cfg.d_c, min_dist)
        self.subcat_dirs = _distinct_unit_vectors(rng, SUBCATS_PER_CATEGORY, cfg.d_v, min_dist)
        self.plural_dir = _unit(rng.normal(cfg.d_v))

    def prototype(self, category: int, subcat_local: int, plural: int) -> np.ndarray:
        """Deterministic part of a region feature (noise is added on top)."""
        return (self.proto_v[category]
                + SUBCAT_OFFSET_SCALE * self.subcat_dirs[subcat_local]
                + PLURAL_OFFSET_SCALE * plural * self.plural_dir)

    def conv_prototype(self, category: int) -> np.ndarray:
        return self.proto_c[category]

    @staticmethod
    def surface(subcat: int, plural: int) -> str:
        if not (0 <= subcat < N_SUBCATS):
            raise ValueError(f"unknown sub-category id {subcat}")
        return SUBCAT_WORDS[subcat][1 if plural else 0]

    @staticmethod
    def category_of(subcat: int) -> int:
        if not (0 <= subcat < N_SUBCATS):
            raise ValueError(f"unknown sub-category id {subcat}")
        return subcat // SUBCATS_PER_CATEGORY


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _distinct_unit_vectors(rng: SeededRng, n: int, dim: int, min_dist: float) -> np.ndarray:
    vecs: list[np.ndarray] = []
    attempts = 0
    while len(vecs) < n:
        cand = _unit(rng.normal(dim))
        if all(np.linalg.norm(cand - v) > min_dist for v in vecs):
            vecs.append(cand)
        attempts += 1
        if attempts > 1000 * n:
            raise ValueError(f"cannot place {n} prototypes at min distance {min_dist} in dim {dim}")
    return np.stack(vecs)


def _split_for(index: int, total: int) -> str:
    if index < int(0.8 * total):
        return "train"
    if index < int(0.9 * total):
        return "val"
    return "test"


def generate(seed: int, cfg: GenConfig | None = None) -> list[Example]:
    """Deterministic dataset: same seed, same config, byte-identical JSONL."""
    cfg = cfg or GenConfig()
    if cfg.n_examples < 1:
        raise ValueError("n_examples must be >= 1")
    max_slots = max(sum(1 for item in t if not isinstance(item, str)) for t in cfg.templates)
    if max_slots > cfg.max_regions:
        raise ValueError(f"grammar references {max_slots} slots but scenes hold at most {cfg.max_regions} regions")
    for t in cfg.templates:
        for item in t:
            if isinstance(item, str) and item not in WORD_ID:
                raise ValueError(f"template word {item!r} not in the textual vocabulary")

    bank = CategoryBank(seed, cfg)
    rng = SeededRng(seed + 1)
    examples = []
    for idx in range(cfg.n_examples):
        template = cfg.templates[rng.choice(len(cfg.templates))]
        slot_plurals = [item[1] for item in template if not isinstance(item, str)]
        n_slots = len(slot_plurals)
        lo = max(cfg.min_regions, n_slots)
        n_regions = lo if lo >= cfg.max_regions else int(rng.integers(lo, cfg.max_regions + 1))
        slot_regions = [int(r) for r in rng.permutation(n_regions)[:n_slots]]

        categories = [rng.choice(cfg.categories) for _ in range(n_regions)]
        sub_locals = [rng.choice(SUBCATS_PER_CATEGORY) for _ in range(n_regions)]
        plurals = [int(rng.bernoulli(0.5)) for _ in range(n_regions)]
        for j, r in enumerate(slot_regions):
            plurals[r] = slot_plurals[j]

        v = np.stack([bank.prototype(categories[r], sub_locals[r], plurals[r])
                      + cfg.noise_scale * rng.normal(cfg.d_v) for r in range(n_regions)])
        vbar = np.stack([bank.conv_prototype(categories[r])
                         + cfg.noise_scale * rng.normal(cfg.d_c) for r in range(n_regions)])
        subcats = [categories[r] * SUBCATS_PER_CATEGORY + sub_locals[r] for r in range(n_regions)]

        tokens: list = [TextTok(BOS_ID)]
        slot_iter = iter(range(n_slots))
        for item in template:
            if isinstance(item, str):
                tokens.append(TextTok(WORD_ID[item]))
            else:
                j = next(slot_iter)
                r = slot_regions[j]
                tokens.append(SlotTok(region=r, subcat=subcats[r], plural=plurals[r]))
        tokens.append(TextTok(EOS_ID))

        regions = RegionSet(v=v, vbar=vbar, categories=categories,
                            subcats=subcats, plurals=plurals)
        examples.append(Example(regions=regions, tokens=tokens,
                                split=_split_for(idx, cfg.n_examples)))
    return examples


# ---------------------------------------------------------------------------
# JSONL (de)serialization
# ---------------------------------------------------------------------------


def token_to_dict(tok) -> dict:
    if isinstance(tok, TextTok):
        return {"t": "text", "id": tok.id}
    if isinstance(tok, SlotTok):
        return {"t": "slot", "region": tok.region, "subcat": tok.subcat,
                "plural": tok.plural}
    raise TypeError(f"not a token: {tok!r}")


def example_to_dict(ex: Example) -> dict:
    regions = []
    for i in range(ex.regions.count):
        regions.append({
            "feat": [float(x) for x in ex.regions.v[i]],
            "conv_feat": [float(x) for x in ex.regions.vbar[i]],
            "category": int(ex.regions.categories[i]),
            "subcat": int(ex.regions.subcats[i]),
            "plural": int(ex.regions.plurals[i]),
        })
    return {"regions": regions, "tokens": [token_to_dict(tok) for tok in ex.tokens]}


def _example_from_dict(d: dict, line_no: int) -> Example:
    def need(obj: dict, key: str, where: str):
        if key not in obj:
            raise ValueError(f"line {line_no}: missing field {key!r} in {where}")
        return obj[key]

    raw_regions = need(d, "regions", "example")
    if not raw_regions:
        raise ValueError(f"line {line_no}: field 'regions' is empty")
    v, vbar, categories, subcats, plurals = [], [], [], [], []
    for r in raw_regions:
        v.append(need(r, "feat", "region"))
        vbar.append(need(r, "conv_feat", "region"))
        categories.append(int(need(r, "category", "region")))
        subcats.append(int(need(r, "subcat", "region")))
        plurals.append(int(need(r, "plural", "region")))
    regions = RegionSet(v=np.array(v), vbar=np.array(vbar), categories=categories,
                        subcats=subcats, plurals=plurals)

    tokens: list = []
    for tok in need(d, "tokens", "example"):
        kind = need(tok, "t", "token")
        if kind == "text":
            tokens.append(TextTok(int(need(tok, "id", "token"))))
        elif kind == "slot":
            tokens.append(SlotTok(region=int(need(tok, "region", "token")),
                                  subcat=int(need(tok, "subcat", "token")),
                                  plural=int(need(tok, "plural", "token"))))
        else:
            raise ValueError(f"line {line_no}: unknown token type {kind!r}")
    for tok in tokens:
        if isinstance(tok, SlotTok) and not (0 <= tok.region < regions.count):
            raise ValueError(f"line {line_no}: slot region {tok.region} out of range")
    return Example(regions=regions, tokens=tokens)


def save_jsonl(examples: list[Example], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(example_to_dict(ex), separators=(",", ":")) + "\n")


def load_jsonl(path: str) -> list[Example]:
    """Load examples; splits are reassigned 80/10/10 by line index."""
    raw: list[Example] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {line_no}: malformed JSON ({e.msg})") from None
            raw.append(_example_from_dict(d, line_no))
    for i, ex in enumerate(raw):
        ex.split = _split_for(i, len(raw))
    return raw


def split_examples(examples: list[Example], split: str) -> list[Example]:
    return [ex for ex in examples if ex.split == split]
