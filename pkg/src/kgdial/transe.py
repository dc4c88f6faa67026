"""TransE: translation embeddings over the KG and link-prediction evaluation.

Training is classic per-triple SGD on the margin ranking loss with uniform
head-or-tail corruption. Gradients are hand-derived (the loss is too simple
to justify the autodiff graph) and checked against finite differences in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .kg import KnowledgeGraph, Triple


class EmbeddingError(Exception):
    """Bad table files, missing rows, or diverged training."""


@dataclass
class TransEConfig:
    d_kg: int = 64
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 100
    negatives_per_positive: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.d_kg <= 0 or self.margin <= 0 or self.learning_rate <= 0:
            raise ValueError("d_kg, margin, and learning_rate must be positive")
        if self.epochs < 0 or self.negatives_per_positive < 1:
            raise ValueError("epochs must be >= 0, negatives_per_positive >= 1")


class KgEmbeddingTable:
    """Per-entity and per-relation vectors plus the names they belong to."""

    def __init__(self, entity_names, relation_names,
                 entity_vectors: np.ndarray, relation_vectors: np.ndarray):
        self.entity_names = tuple(entity_names)
        self.relation_names = tuple(relation_names)
        self.entity_vectors = np.asarray(entity_vectors, dtype=np.float64)
        self.relation_vectors = np.asarray(relation_vectors, dtype=np.float64)
        if self.entity_vectors.shape[0] != len(self.entity_names):
            raise EmbeddingError("one vector per entity name required")
        if self.relation_vectors.shape[0] != len(self.relation_names):
            raise EmbeddingError("one vector per relation name required")
        if self.entity_vectors.shape[1] != self.relation_vectors.shape[1]:
            raise EmbeddingError("entity and relation dimensions differ")
        if not (np.isfinite(self.entity_vectors).all()
                and np.isfinite(self.relation_vectors).all()):
            raise EmbeddingError("non-finite value in embedding table")

    @property
    def d_kg(self) -> int:
        return self.entity_vectors.shape[1]

    def entity_vector(self, entity: int) -> np.ndarray:
        if not 0 <= entity < len(self.entity_names):
            raise EmbeddingError(f"no embedding row for entity id {entity}")
        return self.entity_vectors[entity]

    def relation_vector(self, relation: int) -> np.ndarray:
        if not 0 <= relation < len(self.relation_names):
            raise EmbeddingError(f"no embedding row for relation id {relation}")
        return self.relation_vectors[relation]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"d_kg={self.d_kg}\n")
            for kind, names, vecs in (("E", self.entity_names, self.entity_vectors),
                                      ("R", self.relation_names, self.relation_vectors)):
                for name, vec in zip(names, vecs):
                    values = ",".join(repr(float(v)) for v in vec)
                    fh.write(f"{kind}\t{name}\t{values}\n")

    @classmethod
    def load(cls, path: str | Path) -> "KgEmbeddingTable":
        ent_names, rel_names, ent_vecs, rel_vecs = [], [], [], []
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("d_kg="):
                raise EmbeddingError(f"{path}: missing d_kg header")
            d_kg = int(header[len("d_kg="):])
            for lineno, raw in enumerate(fh, start=2):
                line = raw.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3 or fields[0] not in ("E", "R"):
                    raise EmbeddingError(f"{path}:{lineno}: expected E|R<TAB>name<TAB>values")
                vec = np.array([float(v) for v in fields[2].split(",")])
                if vec.shape[0] != d_kg:
                    raise EmbeddingError(f"{path}:{lineno}: expected {d_kg} values")
                if fields[0] == "E":
                    ent_names.append(fields[1])
                    ent_vecs.append(vec)
                else:
                    rel_names.append(fields[1])
                    rel_vecs.append(vec)
        return cls(ent_names, rel_names, np.array(ent_vecs), np.array(rel_vecs))


def transe_score(h: np.ndarray, r: np.ndarray, t: np.ndarray) -> float:
    """L2 distance ||h + r - t||; lower means more plausible."""
    h, r, t = (np.asarray(v, dtype=np.float64) for v in (h, r, t))
    if not h.shape == r.shape == t.shape:
        raise ValueError(f"dimension mismatch: {h.shape}, {r.shape}, {t.shape}")
    return float(np.linalg.norm(h + r - t))


def margin_loss_and_grads(pos: tuple[np.ndarray, np.ndarray, np.ndarray],
                          neg: tuple[np.ndarray, np.ndarray, np.ndarray],
                          margin: float):
    """max(0, margin + d(pos) - d(neg)) and its gradient w.r.t. all six vectors.

    Returns (loss, (dh_pos, dr_pos, dt_pos, dh_neg, dr_neg, dt_neg)).
    Subgradient 0 is used on the hinge boundary and at zero distance.
    """
    hp, rp, tp = pos
    hn, rn, tn = neg
    up = hp + rp - tp
    un = hn + rn - tn
    dp = float(np.linalg.norm(up))
    dn = float(np.linalg.norm(un))
    loss = margin + dp - dn
    zero = np.zeros_like(hp)
    if loss <= 0.0:
        return 0.0, (zero, zero, zero, zero, zero, zero)
    gp = up / dp if dp > 0 else zero
    gn = un / dn if dn > 0 else zero
    return loss, (gp, gp, -gp, -gn, -gn, gn)


def _project_to_unit_ball(vectors: np.ndarray) -> None:
    norms = np.linalg.norm(vectors, axis=1)
    over = norms > 1.0
    if over.any():
        vectors[over] /= norms[over, None]


def train_transe(kg: KnowledgeGraph, cfg: TransEConfig,
                 on_epoch: Callable[[int, float], None] | None = None) -> KgEmbeddingTable:
    """SGD over shuffled triples; entity rows projected to the unit ball after
    every epoch. Deterministic for a fixed config."""
    if not kg.triples:
        raise EmbeddingError("cannot train on an empty graph")
    rng = np.random.default_rng(cfg.seed)
    n_e, d = kg.n_entities, cfg.d_kg
    bound = 6.0 / np.sqrt(d)
    entities = rng.uniform(-bound, bound, size=(n_e, d))
    entities /= np.linalg.norm(entities, axis=1, keepdims=True)
    relations = rng.uniform(-bound, bound, size=(kg.n_relations, d))
    triples = np.array([(t.subject, t.predicate, t.object) for t in kg.triples])
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        total = 0.0
        count = 0
        for idx in rng.permutation(len(triples)):
            h, r, t = (int(v) for v in triples[idx])
            for _ in range(cfg.negatives_per_positive):
                corrupt_head = bool(rng.integers(2))
                j = int(rng.integers(n_e - 1))
                j += j >= (h if corrupt_head else t)  # never the true entity
                nh, nt = (j, t) if corrupt_head else (h, j)
                loss, grads = margin_loss_and_grads(
                    (entities[h], relations[r], entities[t]),
                    (entities[nh], relations[r], entities[nt]),
                    cfg.margin)
                if not np.isfinite(loss):
                    raise EmbeddingError(
                        f"non-finite loss at epoch {epoch}, triple {(h, r, t)}")
                total += loss
                count += 1
                if loss > 0.0:
                    dh_p, dr_p, dt_p, dh_n, dr_n, dt_n = grads
                    ent_updates: dict[int, np.ndarray] = {}
                    for eid, g in ((h, dh_p), (t, dt_p), (nh, dh_n), (nt, dt_n)):
                        ent_updates[eid] = ent_updates.get(eid, 0) + g
                    for eid, g in ent_updates.items():
                        entities[eid] -= lr * g
                    relations[r] -= lr * (dr_p + dr_n)
        _project_to_unit_ball(entities)
        if on_epoch is not None:
            on_epoch(epoch, total / max(count, 1))
    return KgEmbeddingTable(kg.entity_names, kg.relation_names, entities, relations)


def link_prediction_eval(kg: KnowledgeGraph, table: KgEmbeddingTable,
                         mode: str = "raw") -> dict[str, float]:
    """Rank every triple's true head and tail against all entity substitutions.

    Ranks are pessimistic (equal-scored competitors count as ranked ahead) so
    degenerate all-equal tables cannot score well. Filter mode drops
    competitors that are themselves graph triples.
    """
    if mode not in ("raw", "filter"):
        raise ValueError(f"mode must be 'raw' or 'filter', got {mode!r}")
    if len(table.entity_names) < kg.n_entities or len(table.relation_names) < kg.n_relations:
        raise EmbeddingError("table does not cover every graph id")
    ent = table.entity_vectors
    rel = table.relation_vectors
    known_tails: dict[tuple[int, int], set[int]] = {}
    known_heads: dict[tuple[int, int], set[int]] = {}
    if mode == "filter":
        for tr in kg.triples:
            known_tails.setdefault((tr.subject, tr.predicate), set()).add(tr.object)
            known_heads.setdefault((tr.predicate, tr.object), set()).add(tr.subject)
    ranks = []
    for tr in kg.triples:
        h, r, t = tr.subject, tr.predicate, tr.object
        tail_scores = np.linalg.norm(ent[h] + rel[r] - ent, axis=1)
        ranks.append(_pessimistic_rank(tail_scores, t, known_tails.get((h, r))))
        head_scores = np.linalg.norm(ent + rel[r] - ent[t], axis=1)
        ranks.append(_pessimistic_rank(head_scores, h, known_heads.get((r, t))))
    ranks_arr = np.array(ranks, dtype=np.float64)
    return {
        "mean_rank": float(ranks_arr.mean()),
        "hits_at_10": float((ranks_arr <= 10).mean()),
        "hits_at_1": float((ranks_arr <= 1).mean()),
    }


def _pessimistic_rank(scores: np.ndarray, true_id: int,
                      filtered: set[int] | None) -> int:
    allowed = np.ones(len(scores), dtype=bool)
    allowed[true_id] = False
    if filtered:
        for other in filtered:
            allowed[other] = False
    return 1 + int(np.count_nonzero(allowed & (scores <= scores[true_id])))
