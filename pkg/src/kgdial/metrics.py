"""Faithfulness and overlap metrics: entity coverage P/R/F1 against the
sample's sub-graph plus history, corpus BLEU-4 (no smoothing), and ROUGE-L.

Entity sets come from the deterministic alias linker over the full-KG
lexicon, which is exactly the membership test the metric needs: an entity the
linker cannot resolve is outside the KG and cannot count as covered.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .linking import ENTITY, AliasLexicon, link_mentions
from .prompting import DialogueSample, scan_prompt_tokens


@dataclass(frozen=True)
class CoverageReport:
    precision: float
    recall: float
    f1: float
    generated_entities: frozenset[int]
    reference_entities: frozenset[int]


def _linked_entities(text: str, lexicon: AliasLexicon) -> set[int]:
    return {sp.node for sp in link_mentions(text, lexicon) if sp.kind == ENTITY}


def entity_coverage(response: str, sample: DialogueSample,
                    lexicon: AliasLexicon) -> CoverageReport:
    """Generated set = entities linked in the response; reference set =
    sub-graph entities union entities linked in the history. Empty generated
    set scores precision 1.0, empty reference set scores recall 1.0."""
    generated = _linked_entities(response, lexicon)
    reference = set(sample.sub_graph.entities())
    for _, text in sample.history:
        reference |= _linked_entities(text, lexicon)
    overlap = len(generated & reference)
    precision = overlap / len(generated) if generated else 1.0
    recall = overlap / len(reference) if reference else 1.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return CoverageReport(precision, recall, f1,
                          frozenset(generated), frozenset(reference))


def _tokens(text: str) -> list[str]:
    return [text[s:e] for s, e in scan_prompt_tokens(text)]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(references: Sequence[str], hypotheses: Sequence[str]) -> float:
    """Corpus BLEU, n = 1..4 modified precisions, geometric mean, brevity
    penalty; one reference per hypothesis and no smoothing."""
    if len(references) != len(hypotheses):
        raise ValueError(f"{len(references)} references vs {len(hypotheses)} hypotheses")
    if not references:
        raise ValueError("empty corpus")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = 0
    ref_len = 0
    for ref, hyp in zip(references, hypotheses):
        ref_toks = _tokens(ref)
        hyp_toks = _tokens(hyp)
        hyp_len += len(hyp_toks)
        ref_len += len(ref_toks)
        for n in range(1, 5):
            hyp_counts = _ngrams(hyp_toks, n)
            ref_counts = _ngrams(ref_toks, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    if hyp_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / 4.0
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_precision)


def rouge_l(reference: str, hypothesis: str) -> float:
    """LCS-based F-measure with beta = 1."""
    ref_toks = _tokens(reference)
    hyp_toks = _tokens(hypothesis)
    if not ref_toks and not hyp_toks:
        return 1.0
    if not ref_toks or not hyp_toks:
        return 0.0
    lcs = _lcs_length(ref_toks, hyp_toks)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp_toks)
    recall = lcs / len(ref_toks)
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for tok in a:
        row = [0]
        for j, other in enumerate(b, start=1):
            row.append(prev[j - 1] + 1 if tok == other else max(row[j - 1], prev[j]))
        prev = row
    return prev[-1]


def evaluate_responses(samples: Sequence[DialogueSample], responses: Sequence[str],
                       lexicon: AliasLexicon) -> tuple[dict, list[dict]]:
    """Summary dict plus per-sample detail rows. References are the gold
    responses; coverage statistics are macro-means over samples."""
    if len(samples) != len(responses):
        raise ValueError(f"{len(samples)} samples vs {len(responses)} responses")
    details = []
    for sample, response in zip(samples, responses):
        if sample.response is None:
            raise ValueError("evaluation needs gold responses")
        cov = entity_coverage(response, sample, lexicon)
        details.append({
            "response": response,
            "reference": sample.response,
            "rouge_l": rouge_l(sample.response, response),
            "entity_precision": cov.precision,
            "entity_recall": cov.recall,
            "entity_f1": cov.f1,
        })
    summary = {
        "bleu4": bleu4([s.response for s in samples], list(responses)),
        "rouge_l_mean": _mean(d["rouge_l"] for d in details),
        "entity_precision": _mean(d["entity_precision"] for d in details),
        "entity_recall": _mean(d["entity_recall"] for d in details),
        "entity_f1": _mean(d["entity_f1"] for d in details),
        "sample_count": len(details),
    }
    return summary, details


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values)
