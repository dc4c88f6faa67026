"""Knowledge grounding: per-token local vectors, a triple memory bank, and
attention-weighted global vectors, fused into token embeddings by summation.

All public functions return autodiff Tensors so the generator can train
through them; call `.data` for the plain array. KG rows enter as constants
(the table is frozen while the maps M and W_proj learn).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, ensure, softmax
from .kg import Triple, SubGraph
from .linking import ENTITY, RELATION
from .prompting import TokenSequence
from .transe import KgEmbeddingTable


class GroundingError(Exception):
    """Shape mismatches or nodes without KG rows."""


@dataclass
class GroundingParams:
    """M maps KG space into the model, W_proj compresses concatenated triple
    vectors into memory rows; both trainable, shared across the sequence."""

    M: Tensor        # d_kg x d_model
    W_proj: Tensor   # 3*d_model x d_model
    d_model: int

    def __post_init__(self):
        self.M = ensure(self.M)
        self.W_proj = ensure(self.W_proj)
        if self.M.shape[1] != self.d_model:
            raise GroundingError(f"M maps to {self.M.shape[1]}, expected {self.d_model}")
        if self.W_proj.shape != (3 * self.d_model, self.d_model):
            raise GroundingError(
                f"W_proj must be {(3 * self.d_model, self.d_model)}, got {self.W_proj.shape}")
        if not (np.isfinite(self.M.data).all() and np.isfinite(self.W_proj.data).all()):
            raise GroundingError("non-finite grounding parameter")

    @property
    def d_kg(self) -> int:
        return self.M.shape[0]

    @classmethod
    def create(cls, d_kg: int, d_model: int, rng: np.random.Generator,
               trainable: bool = True) -> "GroundingParams":
        m = _glorot(rng, d_kg, d_model)
        w = _glorot(rng, 3 * d_model, d_model)
        return cls(Tensor(m, requires_grad=trainable),
                   Tensor(w, requires_grad=trainable), d_model)

    @classmethod
    def identity(cls, d_kg: int) -> "GroundingParams":
        """M = I (valid only when d_kg == d_model), W_proj = 0."""
        return cls(Tensor(np.eye(d_kg)), Tensor(np.zeros((3 * d_kg, d_kg))), d_kg)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class MemoryBank:
    """One row per sub-graph triple, in path order."""

    rows: Tensor
    triples: tuple[Triple, ...]

    def __post_init__(self):
        if self.rows.shape[0] != len(self.triples):
            raise GroundingError("one memory row per triple required")


def _kg_rows(table: KgEmbeddingTable, ids: list[int], kind: str) -> Tensor:
    vectors = table.entity_vectors if kind == ENTITY else table.relation_vectors
    for node in ids:
        if not 0 <= node < vectors.shape[0]:
            raise GroundingError(f"no KG row for {kind} id {node}")
    return Tensor(vectors[ids])


def local_grounding(seq: TokenSequence, table: KgEmbeddingTable,
                    params: GroundingParams) -> Tensor:
    """Row i is M(node vector) when token i is linked, zero otherwise."""
    if table.d_kg != params.d_kg:
        raise GroundingError(f"table dim {table.d_kg} != M input dim {params.d_kg}")
    n = len(seq.tokens)
    out = Tensor(np.zeros((n, params.d_model)))
    by_kind: dict[str, list[int]] = {}
    for i, link in enumerate(seq.links):
        if link is not None:
            by_kind.setdefault(link[1], []).append(i)
    for kind, positions in sorted(by_kind.items()):
        rows = _kg_rows(table, [seq.links[i][0] for i in positions], kind)
        # Constant selector matrix scatters the mapped rows back to their
        # token positions without leaving the autodiff graph.
        sel = np.zeros((n, len(positions)))
        sel[positions, np.arange(len(positions))] = 1.0
        out = out + Tensor(sel) @ (rows @ params.M)
    return out


def build_memory_bank(sub_graph: SubGraph, table: KgEmbeddingTable,
                      params: GroundingParams) -> MemoryBank:
    """Row i = W_proj applied to [M(subj) | M(pred) | M(obj)] of triple i."""
    if table.d_kg != params.d_kg:
        raise GroundingError(f"table dim {table.d_kg} != M input dim {params.d_kg}")
    subj = _kg_rows(table, [t.subject for t in sub_graph.path], ENTITY)
    pred = _kg_rows(table, [t.predicate for t in sub_graph.path], RELATION)
    obj = _kg_rows(table, [t.object for t in sub_graph.path], ENTITY)
    v = concat([subj @ params.M, pred @ params.M, obj @ params.M], axis=1)
    return MemoryBank(v @ params.W_proj, sub_graph.path)


def attention_weights(word_embeds, bank: MemoryBank) -> np.ndarray:
    """Per-token softmax weights over memory rows (inference view, no grad)."""
    w = ensure(word_embeds).data
    logits = w @ bank.rows.data.T / math.sqrt(w.shape[-1])
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def global_grounding(word_embeds, seq: TokenSequence, bank: MemoryBank) -> Tensor:
    """Row i = attention(w_i over bank) for linked tokens, zero otherwise."""
    w = ensure(word_embeds)
    if w.shape[0] != len(seq.tokens):
        raise GroundingError(f"{w.shape[0]} embedding rows for {len(seq.tokens)} tokens")
    if w.shape[-1] != bank.rows.shape[-1]:
        raise GroundingError(
            f"embedding dim {w.shape[-1]} != bank dim {bank.rows.shape[-1]}")
    logits = w @ bank.rows.T * (1.0 / math.sqrt(w.shape[-1]))
    mixed = softmax(logits, axis=-1) @ bank.rows
    mask = np.array([[1.0] if link is not None else [0.0] for link in seq.links])
    return mixed * Tensor(mask)


def fuse(w, w_local, w_global) -> Tensor:
    """Fused embedding = vanilla + local + global (elementwise)."""
    w, w_local, w_global = ensure(w), ensure(w_local), ensure(w_global)
    if not w.shape == w_local.shape == w_global.shape:
        raise GroundingError(
            f"shape mismatch: {w.shape}, {w_local.shape}, {w_global.shape}")
    return w + w_local + w_global
