"""Greedy and beam decoding over the combined token space, slot surface
realization, BLEU, and the evaluation protocol used by the CLI.

The combined token space at each step is every textual word (scored as
sentinel mass times word probability) plus every (region, plurality,
sub-category) slot combination. Tokens have a total order: textual words by
id first, then slots by (region, plural, subcat); all tie-breaking is
"lowest token in that order", and final beam ties prefer the shorter
sequence. Beam scoring is length-unnormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import RegionSet
from .heads import WordDistribution
from .taskgen import (BOS_ID, EOS_ID, CategoryBank, Example, SlotTok, TextTok,
                      TEXT_WORDS)


def _token_key(tok) -> tuple:
    if isinstance(tok, TextTok):
        return (0, tok.id, 0, 0)
    return (1, tok.region, tok.plural, tok.subcat)


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def argmax_token(dist: WordDistribution) -> tuple[float, object]:
    """Highest-probability token; ties go to the lowest token in key order."""
    p_sent = dist.p_sentinel
    best_lp = -math.inf
    best_tok = None
    txt = dist.p_txt.data
    for w in range(txt.shape[0]):
        lp = _log(p_sent * txt[w])
        if lp > best_lp:
            best_lp, best_tok = lp, TextTok(w)
    for i in range(dist.n_regions):
        p_r = float(dist.p_regions[i])
        pl = dist.p_plural[i].data
        sc = dist.p_subcat[i].data
        b = int(np.argmax(pl))
        s = int(np.argmax(sc))
        lp = _log(p_r * pl[b] * sc[s])
        if lp > best_lp:
            best_lp, best_tok = lp, SlotTok(region=i, subcat=s, plural=b)
    return best_lp, best_tok


def expansions(dist: WordDistribution, top_subcats: int = 5) -> list[tuple[float, object]]:
    """All textual tokens plus slot tokens capped to the top sub-categories."""
    out: list[tuple[float, object]] = []
    p_sent = dist.p_sentinel
    txt = dist.p_txt.data
    for w in range(txt.shape[0]):
        out.append((_log(p_sent * txt[w]), TextTok(w)))
    for i in range(dist.n_regions):
        p_r = float(dist.p_regions[i])
        pl = dist.p_plural[i].data
        sc = dist.p_subcat[i].data
        top = np.argsort(-sc, kind="stable")[:top_subcats]
        for b in (0, 1):
            for s in top:
                out.append((_log(p_r * pl[b] * sc[int(s)]),
                            SlotTok(region=i, subcat=int(s), plural=b)))
    return out


def greedy_decode(model, regions: RegionSet, max_len: int = 20) -> list:
    """Argmax decoding; stops at EOS or max_len. The emitted EOS is kept."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = model.init_state()
    prev = TextTok(BOS_ID)
    seq: list = []
    for _ in range(max_len):
        dist, _, state = model.step(state, prev, regions)
        _, tok = argmax_token(dist)
        seq.append(tok)
        if tok == TextTok(EOS_ID):
            break
        prev = tok
    return seq


@dataclass
class Hypothesis:
    tokens: list
    step_logps: list[float]
    state: object
    prev: object

    @property
    def logp(self) -> float:
        return sum(self.step_logps)


def beam_decode(model, regions: RegionSet, beam: int = 3, max_len: int = 20,
                top_subcats: int = 5) -> tuple[list, list[tuple[float, list]]]:
    """Length-unnormalized beam search; returns (best tokens, n-best list).

    Hypotheses are retired to the completed pool at EOS; live hypotheses
    that reach max_len are retired as-is. The n-best list is sorted by
    descending log-probability with deterministic tie-breaking.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live = [Hypothesis(tokens=[], step_logps=[], state=model.init_state(),
                       prev=TextTok(BOS_ID))]
    completed: list[Hypothesis] = []
    for _ in range(max_len):
        candidates: list[tuple[float, tuple, int, object, object, float]] = []
        for idx, hyp in enumerate(live):
            dist, _, new_state = model.step(hyp.state, hyp.prev, regions)
            base = hyp.logp
            for lp, tok in expansions(dist, top_subcats):
                candidates.append((base + lp, _token_key(tok), idx, tok, new_state, lp))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_live: list[Hypothesis] = []
        for total, _, idx, tok, new_state, lp in candidates[:beam]:
            hyp = live[idx]
            ext = Hypothesis(tokens=hyp.tokens + [tok], step_logps=hyp.step_logps + [lp],
                             state=new_state, prev=tok)
            if tok == TextTok(EOS_ID):
                completed.append(ext)
            else:
                new_live.append(ext)
        live = new_live
        if not live:
            break
    completed.extend(live)
    completed.sort(key=lambda h: (-h.logp, [_token_key(t) for t in h.tokens]))
    nbest = [(h.logp, h.tokens) for h in completed]
    return nbest[0][1], nbest


def realize_slot(category: int, subcat: int, plural: int, bank: CategoryBank) -> str:
    """Surface form for a grounded slot; the sub-category must belong to the category."""
    if bank.category_of(subcat) != category:
        raise ValueError(f"sub-category {subcat} does not belong to category {category}")
    return bank.surface(subcat, plural)


def tokens_to_words(tokens: list, bracket_slots: bool = False) -> list[str]:
    """Render a token sequence as words; BOS/EOS are dropped."""
    words = []
    for tok in tokens:
        if isinstance(tok, TextTok):
            if tok.id in (BOS_ID, EOS_ID):
                continue
            words.append(TEXT_WORDS[tok.id])
        else:
            w = CategoryBank.surface(tok.subcat, tok.plural)
            words.append(f"[{w}]" if bracket_slots else w)
    return words


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def _ngram_counts(words: list[str], n: int) -> dict[tuple, int]:
    counts: dict[tuple, int] = {}
    for i in range(len(words) - n + 1):
        g = tuple(words[i:i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def bleu(candidate: list[str], references: list[list[str]], max_n: int = 4) -> float:
    """Clipped n-gram precision geometric mean times the brevity penalty.

    Orders with zero matches fall back to add-one smoothing
    ((matches+1)/(total+1)); an empty candidate scores 0.
    """
    if not candidate:
        return 0.0
    if not references or not any(references):
        raise ValueError("bleu needs at least one non-empty reference")
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = _ngram_counts(candidate, n)
        total = sum(cand.values())
        max_ref: dict[tuple, int] = {}
        for ref in references:
            for g, c in _ngram_counts(ref, n).items():
                max_ref[g] = max(max_ref.get(g, 0), c)
        matches = sum(min(c, max_ref.get(g, 0)) for g, c in cand.items())
        if matches == 0:
            p = (matches + 1.0) / (total + 1.0)
        else:
            p = matches / total
        log_sum += math.log(p)
    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / max_n)


# ---------------------------------------------------------------------------
# Evaluation protocol
# ---------------------------------------------------------------------------


def _slot_match_counts(cand_tokens: list, ref_tokens: list) -> tuple[int, int, int]:
    """Greedy multiset matching of generated slots to reference slots by region."""
    ref_regions = [t.region for t in ref_tokens if isinstance(t, SlotTok)]
    cand_regions = [t.region for t in cand_tokens if isinstance(t, SlotTok)]
    pool = list(ref_regions)
    matched = 0
    for r in cand_regions:
        if r in pool:
            pool.remove(r)
            matched += 1
    return matched, len(cand_regions), len(ref_regions)


def sentinel_accuracy(model, examples: list[Example]) -> float:
    """Teacher-forced text-vs-slot decision accuracy (text iff p_sentinel > 0.5)."""
    correct = 0
    total = 0
    for ex in examples:
        state = model.init_state()
        for t in range(1, len(ex.tokens)):
            dist, _, state = model.step(state, ex.tokens[t - 1], ex.regions, train=False)
            predicted_text = dist.p_sentinel > 0.5
            target_text = isinstance(ex.tokens[t], TextTok)
            if predicted_text == target_text:
                correct += 1
            total += 1
    return correct / total if total else 0.0


def evaluate_model(model, examples: list[Example], beam: int = 3,
                   max_len: int = 20) -> dict:
    """BLEU-1/BLEU-4 against the single reference plus slot and sentinel metrics."""
    bleu1_sum = 0.0
    bleu4_sum = 0.0
    matched = generated = referenced = 0
    for ex in examples:
        if beam == 1:
            cand = greedy_decode(model, ex.regions, max_len)
        else:
            cand, _ = beam_decode(model, ex.regions, beam=beam, max_len=max_len)
        cand_words = tokens_to_words(cand)
        ref_words = tokens_to_words(ex.tokens)
        if cand_words:
            bleu1_sum += bleu(cand_words, [ref_words], 1)
            bleu4_sum += bleu(cand_words, [ref_words], 4)
        m, g, r = _slot_match_counts(cand, ex.tokens)
        matched += m
        generated += g
        referenced += r
    n = len(examples)
    return {
        "bleu1": bleu1_sum / n if n else 0.0,
        "bleu4": bleu4_sum / n if n else 0.0,
        "slot_precision": matched / generated if generated else 0.0,
        "slot_recall": matched / referenced if referenced else 0.0,
        "sentinel_accuracy": sentinel_accuracy(model, examples),
    }
