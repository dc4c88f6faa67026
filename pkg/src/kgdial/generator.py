"""Toy transformer encoder-decoder over grounded inputs, with beam search.

Pre-norm architecture, learned positions, batch size 1 training (no padding
anywhere). The encoder consumes fused token embeddings (vanilla + local +
global grounding); the decoder is plain. Beam search scores by summed token
log-prob with no length normalization, so an exhaustive enumerator is an
exact oracle when the beam is wide enough.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Adam, Tensor, gather_rows, log_softmax, gelu, no_grad, softmax
from .grounding import (GroundingParams, build_memory_bank, fuse,
                        global_grounding, local_grounding)
from .kg import KnowledgeGraph, SubGraph
from .linking import AliasLexicon, build_lexicon
from .modelio import load_model, save_model
from .prompting import (BOS, EOS, DialogueSample, TokenSequence, Vocab,
                        detokenize, encode_sample, serialize_input, tokenize)
from .transe import KgEmbeddingTable

MODEL_TYPE = "generator"


class GeneratorError(Exception):
    """Bad config, divergence, or oversized inputs."""


@dataclass
class GeneratorConfig:
    d_model: int = 64
    layers: int = 2
    heads: int = 2
    ffn_dim: int = 128
    max_len: int = 40
    max_positions: int = 256
    learning_rate: float = 3e-4
    epochs: int = 30
    seed: int = 0
    beams: int = 4       # B
    candidates: int = 4  # N
    grounded: bool = True  # False zeroes the KG table and W_proj (ablation)

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise GeneratorError("d_model must be divisible by heads")
        if not self.beams >= self.candidates >= 1:
            raise GeneratorError("need beams >= candidates >= 1")
        if self.max_len < 1 or self.max_positions < 2:
            raise GeneratorError("max_len and max_positions must be positive")


@dataclass(frozen=True)
class Candidate:
    """One beam hypothesis; tokens always end with `<eos>` (forced=True when
    the eos was appended at the length cap rather than chosen)."""

    tokens: tuple[int, ...]
    log_prob: float
    text: str
    forced: bool = False


def _layernorm(x: Tensor, g: Tensor, b: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) * (var + eps) ** -0.5 * g + b


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, d = x.shape
    return x.reshape(*lead, length, heads, d // heads).swapaxes(-3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, dh = x.shape
    return x.swapaxes(-3, -2).reshape(*lead, length, heads * dh)


def _mha(q_in: Tensor, kv_in: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
         wo: Tensor, heads: int, mask: np.ndarray | None = None) -> Tensor:
    q = _split_heads(q_in @ wq, heads)
    k = _split_heads(kv_in @ wk, heads)
    v = _split_heads(kv_in @ wv, heads)
    scores = q @ k.swapaxes(-1, -2) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + Tensor(mask)
    return _merge_heads(softmax(scores, axis=-1) @ v) @ wo


def _causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), -1e9), k=1)


class GeneratorModel:
    def __init__(self, cfg: GeneratorConfig, vocab: Vocab,
                 kg_table: KgEmbeddingTable, grounding: GroundingParams,
                 weights: dict[str, Tensor]):
        self.cfg = cfg
        self.vocab = vocab
        self.kg_table = kg_table  # frozen: plain arrays, never updated
        self.grounding = grounding
        self.weights = weights

    # -- construction --------------------------------------------------------

    @classmethod
    def init(cls, cfg: GeneratorConfig, vocab: Vocab, kg_table: KgEmbeddingTable,
             rng: np.random.Generator) -> "GeneratorModel":
        """Parameter draws happen in a fixed order regardless of cfg.grounded,
        so grounded and vanilla models share every other initial weight."""
        d, v = cfg.d_model, len(vocab)
        w: dict[str, Tensor] = {}

        def normal(name, *shape, scale=0.02):
            w[name] = Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

        def glorot(name, fan_in, fan_out):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w[name] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                             requires_grad=True)

        def ln(prefix):
            w[f"{prefix}_g"] = Tensor(np.ones(d), requires_grad=True)
            w[f"{prefix}_b"] = Tensor(np.zeros(d), requires_grad=True)

        normal("tok_embed", v, d)
        normal("enc_pos", cfg.max_positions, d)
        normal("dec_pos", cfg.max_positions, d)
        for i in range(cfg.layers):
            ln(f"enc{i}.ln1")
            for name in ("wq", "wk", "wv", "wo"):
                glorot(f"enc{i}.{name}", d, d)
            ln(f"enc{i}.ln2")
            glorot(f"enc{i}.ffn_w1", d, cfg.ffn_dim)
            w[f"enc{i}.ffn_b1"] = Tensor(np.zeros(cfg.ffn_dim), requires_grad=True)
            glorot(f"enc{i}.ffn_w2", cfg.ffn_dim, d)
            w[f"enc{i}.ffn_b2"] = Tensor(np.zeros(d), requires_grad=True)
        for i in range(cfg.layers):
            ln(f"dec{i}.ln1")
            for name in ("wq", "wk", "wv", "wo"):
                glorot(f"dec{i}.self_{name}", d, d)
            ln(f"dec{i}.ln2")
            for name in ("wq", "wk", "wv", "wo"):
                glorot(f"dec{i}.cross_{name}", d, d)
            ln(f"dec{i}.ln3")
            glorot(f"dec{i}.ffn_w1", d, cfg.ffn_dim)
            w[f"dec{i}.ffn_b1"] = Tensor(np.zeros(cfg.ffn_dim), requires_grad=True)
            glorot(f"dec{i}.ffn_w2", cfg.ffn_dim, d)
            w[f"dec{i}.ffn_b2"] = Tensor(np.zeros(d), requires_grad=True)
        ln("enc_ln")
        ln("dec_ln")
        glorot("out_w", d, v)
        w["out_b"] = Tensor(np.zeros(v), requires_grad=True)

        grounding = GroundingParams.create(kg_table.d_kg, d, rng)
        if not cfg.grounded:
            kg_table = KgEmbeddingTable(
                kg_table.entity_names, kg_table.relation_names,
                np.zeros_like(kg_table.entity_vectors),
                np.zeros_like(kg_table.relation_vectors))
            grounding.W_proj.data[:] = 0.0
        return cls(cfg, vocab, kg_table, grounding, w)

    def parameters(self) -> list[Tensor]:
        return [*self.weights.values(), self.grounding.M, self.grounding.W_proj]

    # -- forward -------------------------------------------------------------

    def encode(self, seq: TokenSequence, sub_graph: SubGraph) -> Tensor:
        """Grounded encoder: returns (seq_len, d_model) memory."""
        n = len(seq.tokens)
        if n > self.cfg.max_positions:
            raise GeneratorError(f"input length {n} exceeds {self.cfg.max_positions}")
        ids = np.asarray(seq.tokens)
        w = gather_rows(self.weights["tok_embed"], ids)
        w_local = local_grounding(seq, self.kg_table, self.grounding)
        bank = build_memory_bank(sub_graph, self.kg_table, self.grounding)
        w_global = global_grounding(w, seq, bank)
        x = fuse(w, w_local, w_global) + gather_rows(self.weights["enc_pos"],
                                                     np.arange(n))
        for i in range(self.cfg.layers):
            p = lambda name: self.weights[f"enc{i}.{name}"]
            h = _layernorm(x, p("ln1_g"), p("ln1_b"))
            x = x + _mha(h, h, p("wq"), p("wk"), p("wv"), p("wo"), self.cfg.heads)
            h = _layernorm(x, p("ln2_g"), p("ln2_b"))
            x = x + (gelu(h @ p("ffn_w1") + p("ffn_b1")) @ p("ffn_w2") + p("ffn_b2"))
        return _layernorm(x, self.weights["enc_ln_g"], self.weights["enc_ln_b"])

    def decode(self, ids: np.ndarray, memory: Tensor) -> Tensor:
        """ids: (batch, dec_len) int array -> (batch, dec_len, vocab) logits."""
        ids = np.asarray(ids)
        length = ids.shape[-1]
        if length > self.cfg.max_positions:
            raise GeneratorError(f"decoder length {length} exceeds {self.cfg.max_positions}")
        x = gather_rows(self.weights["tok_embed"], ids) + gather_rows(
            self.weights["dec_pos"], np.arange(length))
        mask = _causal_mask(length)
        for i in range(self.cfg.layers):
            p = lambda name: self.weights[f"dec{i}.{name}"]
            h = _layernorm(x, p("ln1_g"), p("ln1_b"))
            x = x + _mha(h, h, p("self_wq"), p("self_wk"), p("self_wv"),
                         p("self_wo"), self.cfg.heads, mask)
            h = _layernorm(x, p("ln2_g"), p("ln2_b"))
            x = x + _mha(h, memory, p("cross_wq"), p("cross_wk"), p("cross_wv"),
                         p("cross_wo"), self.cfg.heads)
            h = _layernorm(x, p("ln3_g"), p("ln3_b"))
            x = x + (gelu(h @ p("ffn_w1") + p("ffn_b1")) @ p("ffn_w2") + p("ffn_b2"))
        x = _layernorm(x, self.weights["dec_ln_g"], self.weights["dec_ln_b"])
        return x @ self.weights["out_w"] + self.weights["out_b"]

    def sample_loss(self, seq: TokenSequence, sub_graph: SubGraph,
                    response_ids: Sequence[int]) -> Tensor:
        """Teacher-forced mean token cross-entropy for one sample."""
        memory = self.encode(seq, sub_graph)
        dec_in = np.array([[BOS, *response_ids]])
        targets = [*response_ids, EOS]
        logits = self.decode(dec_in, memory)
        logp = log_softmax(logits, axis=-1)
        onehot = np.zeros(logits.shape)
        onehot[0, np.arange(len(targets)), targets] = 1.0
        return -(logp * Tensor(onehot)).sum() * (1.0 / len(targets))

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        weights = {name: t.data for name, t in self.weights.items()}
        weights["grounding.M"] = self.grounding.M.data
        weights["grounding.W_proj"] = self.grounding.W_proj.data
        weights["kg.entity_vectors"] = self.kg_table.entity_vectors
        weights["kg.relation_vectors"] = self.kg_table.relation_vectors
        meta = {
            "vocab": list(self.vocab.tokens),
            "entity_names": list(self.kg_table.entity_names),
            "relation_names": list(self.kg_table.relation_names),
        }
        save_model(path, MODEL_TYPE, asdict(self.cfg), weights, meta)

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorModel":
        config, weights, meta = load_model(path, MODEL_TYPE)
        cfg = GeneratorConfig(**config)
        vocab = Vocab(meta["vocab"])
        kg_table = KgEmbeddingTable(meta["entity_names"], meta["relation_names"],
                                    weights.pop("kg.entity_vectors"),
                                    weights.pop("kg.relation_vectors"))
        grounding = GroundingParams(
            Tensor(weights.pop("grounding.M"), requires_grad=True),
            Tensor(weights.pop("grounding.W_proj"), requires_grad=True),
            cfg.d_model)
        tensors = {name: Tensor(arr, requires_grad=True) for name, arr in weights.items()}
        return cls(cfg, vocab, kg_table, grounding, tensors)


def train_generator(corpus: Sequence[DialogueSample], kg: KnowledgeGraph,
                    kg_table: KgEmbeddingTable, cfg: GeneratorConfig,
                    vocab: Vocab | None = None,
                    on_epoch: Callable[[int, float], None] | None = None,
                    ) -> GeneratorModel:
    """Per-sample SGD (Adam, batch size 1) on teacher-forced cross-entropy.
    Deterministic for a fixed config; KG rows stay frozen throughout."""
    if not corpus:
        raise GeneratorError("cannot train on an empty corpus")
    for sample in corpus:
        if sample.response is None:
            raise GeneratorError("every training sample needs a gold response")
    lexicon = build_lexicon(kg)
    if vocab is None:
        texts = [serialize_input(s, kg) for s in corpus]
        texts += [s.response for s in corpus]
        vocab = Vocab.build(texts)
    rng = np.random.default_rng(cfg.seed)
    model = GeneratorModel.init(cfg, vocab, kg_table, rng)
    encoded = []
    for sample in corpus:
        seq = encode_sample(sample, kg, lexicon, vocab)
        resp_ids = tokenize(sample.response, [], vocab).tokens
        encoded.append((seq, sample.sub_graph, resp_ids))
    opt = Adam(model.parameters(), cfg.learning_rate)
    for epoch in range(cfg.epochs):
        total = 0.0
        for si in rng.permutation(len(encoded)):
            seq, sub_graph, resp_ids = encoded[si]
            opt.zero_grad()
            loss = model.sample_loss(seq, sub_graph, resp_ids)
            if not np.isfinite(loss.data):
                raise GeneratorError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.data)
        if on_epoch is not None:
            on_epoch(epoch, total / len(encoded))
    return model


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def beam_generate(model: GeneratorModel, sample: DialogueSample,
                  kg: KnowledgeGraph, lexicon: AliasLexicon | None = None,
                  n: int | None = None, b: int | None = None) -> list[Candidate]:
    """Top-N candidates from a width-B beam.

    Expansion ties break by (higher log-prob, lower token id, lower beam
    index); final ordering by (higher log-prob, token sequence). Beams that
    reach max_len without `<eos>` get it appended, scored, and flagged.
    """
    n = model.cfg.candidates if n is None else n
    b = model.cfg.beams if b is None else b
    if not b >= n >= 1:
        raise GeneratorError(f"need beams >= candidates >= 1, got B={b}, N={n}")
    if lexicon is None:
        lexicon = build_lexicon(kg)
    seq = encode_sample(sample, kg, lexicon, model.vocab)
    finished: list[Candidate] = []
    with no_grad():
        memory = model.encode(seq, sample.sub_graph)
        actives: list[tuple[list[int], float]] = [([BOS], 0.0)]
        for _ in range(model.cfg.max_len):
            if not actives:
                break
            ids = np.array([toks for toks, _ in actives])
            logp = _log_softmax_np(model.decode(ids, memory).data[:, -1, :])
            expansions = sorted(
                ((actives[ai][1] + logp[ai, tid], tid, ai)
                 for ai in range(len(actives)) for tid in range(logp.shape[1])),
                key=lambda e: (-e[0], e[1], e[2]))
            next_actives = []
            for lp, tid, ai in expansions[:b]:
                toks = actives[ai][0] + [tid]
                if tid == EOS:
                    finished.append(Candidate(tuple(toks[1:]), lp,
                                              detokenize(toks, model.vocab)))
                else:
                    next_actives.append((toks, lp))
            actives = next_actives
        if actives:
            ids = np.array([toks for toks, _ in actives])
            logp = _log_softmax_np(model.decode(ids, memory).data[:, -1, :])
            for ai, (toks, lp) in enumerate(actives):
                toks = toks + [EOS]
                finished.append(Candidate(tuple(toks[1:]), lp + logp[ai, EOS],
                                          detokenize(toks, model.vocab), forced=True))
    finished.sort(key=lambda c: (-c.log_prob, c.tokens))
    return finished[:n]
