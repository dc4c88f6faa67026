"""Conversational graph walker: an LSTM that scores KG paths given (history,
response) and re-ranks beam candidates by the annotated path's likelihood.

Action embeddings follow the sum-of-spaces recipe: (entity KG vector mapped
into the walker space + entity name sentence embedding) concatenated with the
relation counterpart. Sentence embeddings are mean-pooled trainable token
embeddings, independent of the generator's table. Per-step probabilities are
softmaxes over the local candidate set (out-edges, inverses, STOP), so path
likelihoods are well-defined on any graph.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Adam, Tensor, concat, gather_rows, log_softmax, no_grad
from .generator import Candidate
from .kg import Action, KnowledgeGraph, SubGraph, stop_action
from .modelio import load_model, save_model
from .prompting import DialogueSample, Vocab, serialize_history, tokenize
from .transe import KgEmbeddingTable

MODEL_TYPE = "reranker"

_GATES = ("i", "f", "g", "o")


class RerankerError(Exception):
    """Config errors, path/graph mismatches, or divergence."""


@dataclass
class RerankerConfig:
    d_rr: int = 64
    learning_rate: float = 3e-3
    epochs: int = 30
    seed: int = 0
    max_hops: int = 3
    use_kg: bool = True  # False drops to sentence-only action embeddings

    def __post_init__(self):
        if self.d_rr <= 0 or self.learning_rate <= 0:
            raise RerankerError("d_rr and learning_rate must be positive")
        if self.epochs < 0 or self.max_hops < 1:
            raise RerankerError("epochs must be >= 0 and max_hops >= 1")


class RerankerModel:
    def __init__(self, cfg: RerankerConfig, vocab: Vocab,
                 kg_table: KgEmbeddingTable, weights: dict[str, Tensor]):
        self.cfg = cfg
        self.vocab = vocab
        self.kg_table = kg_table  # frozen copy; zeroed when use_kg is False
        self.weights = weights

    @classmethod
    def init(cls, cfg: RerankerConfig, vocab: Vocab, kg_table: KgEmbeddingTable,
             rng: np.random.Generator) -> "RerankerModel":
        d = cfg.d_rr
        w: dict[str, Tensor] = {}

        def glorot(name, fan_in, fan_out):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w[name] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                             requires_grad=True)

        w["tok_embed"] = Tensor(rng.normal(0.0, 0.02, size=(len(vocab), d)),
                                requires_grad=True)
        glorot("kg_map", kg_table.d_kg, d)
        # KG rows live near the unit sphere while pooled token embeddings start
        # near 0.02; shrink the map so neither half of an action embedding
        # drowns the other at the start of training.
        w["kg_map"].data *= 0.01
        glorot("w_init_h", 2 * d, d)
        w["b_init_h"] = Tensor(np.zeros(d), requires_grad=True)
        glorot("w_init_c", 2 * d, d)
        w["b_init_c"] = Tensor(np.zeros(d), requires_grad=True)
        for gate in _GATES:
            glorot(f"w_x_{gate}", 2 * d, d)
            glorot(f"w_h_{gate}", d, d)
            w[f"b_{gate}"] = Tensor(np.zeros(d), requires_grad=True)
        # Zero scorer start: an untrained walker is exactly uniform per step.
        w["w_score"] = Tensor(np.zeros((d, 2 * d)), requires_grad=True)
        if not cfg.use_kg:
            kg_table = KgEmbeddingTable(
                kg_table.entity_names, kg_table.relation_names,
                np.zeros_like(kg_table.entity_vectors),
                np.zeros_like(kg_table.relation_vectors))
        return cls(cfg, vocab, kg_table, w)

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    def _lstm_step(self, a: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        w = self.weights
        i = (a @ w["w_x_i"] + h @ w["w_h_i"] + w["b_i"]).sigmoid()
        f = (a @ w["w_x_f"] + h @ w["w_h_f"] + w["b_f"]).sigmoid()
        g = (a @ w["w_x_g"] + h @ w["w_h_g"] + w["b_g"]).tanh()
        o = (a @ w["w_x_o"] + h @ w["w_h_o"] + w["b_o"]).sigmoid()
        c_next = f * c + i * g
        return o * c_next.tanh(), c_next

    def init_state(self, history: Sequence[tuple[str, str]],
                   response: str) -> tuple[Tensor, Tensor]:
        """The (H, R) conditioning enters here and only here."""
        z = concat([sentence_embed(serialize_history(history), self),
                    sentence_embed(response, self)], axis=1)
        h = (z @ self.weights["w_init_h"] + self.weights["b_init_h"]).tanh()
        c = (z @ self.weights["w_init_c"] + self.weights["b_init_c"]).tanh()
        return h, c

    def step_logprobs(self, h: Tensor, action_embeds: Tensor) -> Tensor:
        """(1, k) log-probabilities over the k candidate actions."""
        logits = (h @ self.weights["w_score"]) @ action_embeds.T
        return log_softmax(logits, axis=-1)

    def save(self, path: str | Path) -> None:
        weights = {name: t.data for name, t in self.weights.items()}
        weights["kg.entity_vectors"] = self.kg_table.entity_vectors
        weights["kg.relation_vectors"] = self.kg_table.relation_vectors
        meta = {
            "vocab": list(self.vocab.tokens),
            "entity_names": list(self.kg_table.entity_names),
            "relation_names": list(self.kg_table.relation_names),
        }
        save_model(path, MODEL_TYPE, asdict(self.cfg), weights, meta)

    @classmethod
    def load(cls, path: str | Path) -> "RerankerModel":
        config, weights, meta = load_model(path, MODEL_TYPE)
        cfg = RerankerConfig(**config)
        vocab = Vocab(meta["vocab"])
        kg_table = KgEmbeddingTable(meta["entity_names"], meta["relation_names"],
                                    weights.pop("kg.entity_vectors"),
                                    weights.pop("kg.relation_vectors"))
        tensors = {name: Tensor(arr, requires_grad=True) for name, arr in weights.items()}
        return cls(cfg, vocab, kg_table, tensors)


def sentence_embed(text: str, model: RerankerModel) -> Tensor:
    """(1, d_rr) mean of token embeddings; zero row for empty text."""
    ids = tokenize(text, [], model.vocab).tokens
    if not ids:
        return Tensor(np.zeros((1, model.cfg.d_rr)))
    return gather_rows(model.weights["tok_embed"], np.array(ids)).mean(
        axis=0, keepdims=True)


def action_embed(action: Action, kg_table: KgEmbeddingTable,
                 model: RerankerModel) -> Tensor:
    """(1, 2*d_rr) row: [entity KG + entity sentence | relation KG + relation
    sentence]. Inverse traversal negates the relation's KG component; STOP has
    a zero relation half and the stay-put entity half."""
    ent_kg = Tensor(kg_table.entity_vector(action.target)[None, :]) @ model.weights["kg_map"]
    ent = ent_kg + sentence_embed(kg_table.entity_names[action.target], model)
    if action.is_stop:
        rel = Tensor(np.zeros((1, model.cfg.d_rr)))
    else:
        rel_kg = Tensor(kg_table.relation_vector(action.relation)[None, :]) @ model.weights["kg_map"]
        if action.inverse:
            rel_kg = -rel_kg
        rel = rel_kg + sentence_embed(kg_table.relation_names[action.relation], model)
    return concat([ent, rel], axis=1)


def _gold_sequence(path: SubGraph) -> list[Action]:
    return list(path.gold_actions()) + [stop_action(path.end)]


def path_logprob(model: RerankerModel, history: Sequence[tuple[str, str]],
                 response: str, path: SubGraph, kg: KnowledgeGraph) -> Tensor:
    """Teacher-forced log p(gold action sequence + STOP | history, response).

    Scalar Tensor (differentiable); always <= 0 and non-increasing as the
    path grows.
    """
    h, c = model.init_state(history, response)
    current = path.start
    total = Tensor(np.zeros(()))
    for gold in _gold_sequence(path):
        candidates = kg.outgoing_actions(current)
        try:
            gold_idx = candidates.index(gold)
        except ValueError:
            raise RerankerError(
                f"gold action {gold} unavailable at entity {current}; "
                "path and graph disagree") from None
        embeds = concat([action_embed(a, model.kg_table, model) for a in candidates],
                        axis=0)
        logp = model.step_logprobs(h, embeds)
        pick = np.zeros((logp.shape[1], 1))
        pick[gold_idx, 0] = 1.0
        total = total + (logp @ Tensor(pick)).reshape(())
        h, c = model._lstm_step(_row(embeds, gold_idx), h, c)
        current = gold.target
    return total


def _row(matrix: Tensor, i: int) -> Tensor:
    """Select one row as a (1, d) Tensor without leaving the graph."""
    sel = np.zeros((1, matrix.shape[0]))
    sel[0, i] = 1.0
    return Tensor(sel) @ matrix


def rerank_scores(model: RerankerModel, history: Sequence[tuple[str, str]],
                  path: SubGraph, candidates: Sequence[Candidate],
                  kg: KnowledgeGraph) -> list[float]:
    with no_grad():
        return [float(path_logprob(model, history, c.text, path, kg).data)
                for c in candidates]


def select_response(model: RerankerModel, history: Sequence[tuple[str, str]],
                    path: SubGraph, candidates: Sequence[Candidate],
                    kg: KnowledgeGraph) -> Candidate:
    """The candidate under which the annotated path is most likely; ties go to
    the lowest index (argmax is invariant to any increasing score transform)."""
    if not candidates:
        raise RerankerError("no candidates to select from")
    scores = rerank_scores(model, history, path, candidates, kg)
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return candidates[best]


def train_reranker(corpus: Sequence[DialogueSample], kg: KnowledgeGraph,
                   kg_table: KgEmbeddingTable, cfg: RerankerConfig,
                   on_epoch: Callable[[int, float], None] | None = None,
                   ) -> RerankerModel:
    """Minimizes NLL of gold action sequences (gold response as R)."""
    if not corpus:
        raise RerankerError("cannot train on an empty corpus")
    for sample in corpus:
        if sample.response is None:
            raise RerankerError("every training sample needs a gold response")
    texts = [serialize_history(s.history) for s in corpus]
    texts += [s.response for s in corpus]
    texts += list(kg.entity_names) + list(kg.relation_names)
    vocab = Vocab.build(texts)
    rng = np.random.default_rng(cfg.seed)
    model = RerankerModel.init(cfg, vocab, kg_table, rng)
    opt = Adam(model.parameters(), cfg.learning_rate)
    for epoch in range(cfg.epochs):
        total = 0.0
        for si in rng.permutation(len(corpus)):
            sample = corpus[si]
            opt.zero_grad()
            loss = -path_logprob(model, sample.history, sample.response,
                                 sample.sub_graph, kg)
            if not np.isfinite(loss.data):
                raise RerankerError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.data)
        if on_epoch is not None:
            on_epoch(epoch, total / len(corpus))
    return model


def _action_key(actions: tuple[Action, ...]) -> tuple:
    return tuple((a.relation, a.inverse, a.target, a.is_stop) for a in actions)


def walk_paths(model: RerankerModel, history: Sequence[tuple[str, str]],
               response: str, start: int, kg: KnowledgeGraph,
               beam_width: int) -> list[tuple[tuple[Action, ...], float]]:
    """Beam search over STOP-terminated action sequences from `start`.

    At max_hops the only expansion is STOP (still scored against the full
    local candidate set). Returns complete paths sorted by log-prob, ties by
    action tuple, truncated to the beam width.
    """
    with no_grad():
        h0, c0 = model.init_state(history, response)
        embed_cache: dict[Action, Tensor] = {}

        def embeds_for(cands: list[Action]) -> Tensor:
            for a in cands:
                if a not in embed_cache:
                    embed_cache[a] = action_embed(a, model.kg_table, model)
            return concat([embed_cache[a] for a in cands], axis=0)

        actives: list[tuple[tuple[Action, ...], float, int, Tensor, Tensor]] = [
            ((), 0.0, start, h0, c0)]
        finished: list[tuple[tuple[Action, ...], float]] = []
        for depth in range(model.cfg.max_hops + 1):
            if not actives:
                break
            expansions = []
            for actions, lp, current, h, c in actives:
                cands = kg.outgoing_actions(current)
                logp = model.step_logprobs(h, embeds_for(cands)).data[0]
                for ci, cand in enumerate(cands):
                    if depth == model.cfg.max_hops and not cand.is_stop:
                        continue
                    expansions.append((lp + float(logp[ci]), actions + (cand,),
                                       cand, h, c))
            expansions.sort(key=lambda e: (-e[0], _action_key(e[1])))
            next_actives = []
            for lp, actions, cand, h, c in expansions[:beam_width]:
                if cand.is_stop:
                    finished.append((actions, lp))
                else:
                    a = embed_cache[cand]
                    h2, c2 = model._lstm_step(a, h, c)
                    next_actives.append((actions, lp, cand.target, h2, c2))
            actives = next_actives
    finished.sort(key=lambda f: (-f[1], _action_key(f[0])))
    return finished[:beam_width]


def path_beam_hits_at_k(model: RerankerModel, corpus: Sequence[DialogueSample],
                        kg: KnowledgeGraph, k: int,
                        beam_width: int | None = None) -> float:
    """Fraction of samples whose gold path (with STOP) lands in the top-k
    complete paths found by the walker's beam."""
    if not corpus:
        raise RerankerError("empty corpus")
    beam_width = max(k, 8) if beam_width is None else max(k, beam_width)
    hits = 0
    for sample in corpus:
        gold = tuple(_gold_sequence(sample.sub_graph))
        found = walk_paths(model, sample.history, sample.response or "",
                           sample.sub_graph.start, kg, beam_width)
        top = [actions for actions, _ in found[:k]]
        hits += gold in top
    return hits / len(corpus)
