"""Directed multi-relational knowledge graph: triples, walkable sub-graph paths,
and the action space (forward edges, inverse edges, STOP) used by the graph walker.

Graphs are immutable after construction and safe to share across threads.
Entity and relation ids are separate 0-based namespaces assigned by first
appearance in the source file; surface names are the canonical keys on disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

# Reserved relation id for the walker's terminal action. Never a table row:
# the STOP action's knowledge-graph components are defined to be zero.
STOP_RELATION = -1


class GraphError(Exception):
    """Malformed graph data or a lookup that cannot be resolved."""


class KgParseError(GraphError):
    """Bad record in a KG file; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def normalize_name(name: str) -> str:
    """Trim and collapse internal whitespace runs to single spaces."""
    return " ".join(name.split())


@dataclass(frozen=True)
class Triple:
    """One directed edge: subject --predicate--> object (all internal ids)."""

    subject: int
    predicate: int
    object: int


@dataclass(frozen=True)
class Action:
    """A single walk step out of the current entity.

    Forward actions traverse a triple subject->object; inverse actions traverse
    object->subject. The STOP action terminates the walk (target = current
    entity, relation = STOP_RELATION).
    """

    relation: int
    inverse: bool
    target: int
    is_stop: bool = False


def stop_action(entity: int) -> Action:
    return Action(STOP_RELATION, False, entity, is_stop=True)


@dataclass(frozen=True)
class SubGraph:
    """An annotated path through the graph: ordered triples plus the traversal
    orientation of each one (inverse_flags[i] is True when step i walks the
    triple object->subject)."""

    path: tuple[Triple, ...]
    inverse_flags: tuple[bool, ...]
    start: int

    @property
    def triple_count(self) -> int:
        return len(self.path)

    @property
    def end(self) -> int:
        last = self.path[-1]
        return last.subject if self.inverse_flags[-1] else last.object

    def entities(self) -> set[int]:
        out: set[int] = set()
        for t in self.path:
            out.add(t.subject)
            out.add(t.object)
        return out

    def relations(self) -> set[int]:
        return {t.predicate for t in self.path}

    def gold_actions(self) -> list[Action]:
        """The walk as actions, excluding the terminal STOP."""
        actions = []
        for t, inv in zip(self.path, self.inverse_flags):
            target = t.subject if inv else t.object
            actions.append(Action(t.predicate, inv, target))
        return actions


class KnowledgeGraph:
    """Immutable triple store with per-entity forward/inverse adjacency."""

    def __init__(self, entity_names: Sequence[str], relation_names: Sequence[str],
                 triples: Sequence[Triple]):
        self.entity_names = tuple(entity_names)
        self.relation_names = tuple(relation_names)
        self.triples = tuple(triples)
        # Case-insensitive lookup; when names differ only by case the lowest
        # id wins, matching the alias lexicon's collision rule.
        self._entity_by_key: dict[str, int] = {}
        for i, name in enumerate(self.entity_names):
            self._entity_by_key.setdefault(name.lower(), i)
        self._relation_by_key: dict[str, int] = {}
        for i, name in enumerate(self.relation_names):
            self._relation_by_key.setdefault(name.lower(), i)
        self._triple_set = frozenset(self.triples)
        if len(self._triple_set) != len(self.triples):
            raise GraphError("duplicate triples in graph construction")
        outgoing: dict[int, list[tuple[int, int]]] = {e: [] for e in range(len(self.entity_names))}
        incoming: dict[int, list[tuple[int, int]]] = {e: [] for e in range(len(self.entity_names))}
        for t in self.triples:
            outgoing[t.subject].append((t.predicate, t.object))
            incoming[t.object].append((t.predicate, t.subject))
        self._outgoing = {e: tuple(v) for e, v in outgoing.items()}
        self._incoming = {e: tuple(v) for e, v in incoming.items()}

    # -- vocabulary lookups ------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str) -> int:
        key = normalize_name(name).lower()
        try:
            return self._entity_by_key[key]
        except KeyError:
            raise GraphError(f"unknown entity: {name!r}") from None

    def relation_id(self, name: str) -> int:
        key = normalize_name(name).lower()
        try:
            return self._relation_by_key[key]
        except KeyError:
            raise GraphError(f"unknown relation: {name!r}") from None

    def entity_name(self, entity: int) -> str:
        if not 0 <= entity < len(self.entity_names):
            raise GraphError(f"entity id out of range: {entity}")
        return self.entity_names[entity]

    def relation_name(self, relation: int) -> str:
        # STOP_RELATION (-1) must not alias the last relation via negative
        # indexing.
        if not 0 <= relation < len(self.relation_names):
            raise GraphError(f"relation id out of range: {relation}")
        return self.relation_names[relation]

    def has_triple(self, triple: Triple) -> bool:
        return triple in self._triple_set

    def resolve_triple(self, subject: str, predicate: str, object: str) -> Triple:
        return Triple(self.entity_id(subject), self.relation_id(predicate),
                      self.entity_id(object))

    # -- walker action space -----------------------------------------------

    def outgoing_actions(self, entity: int) -> list[Action]:
        """All walk steps from `entity`: forward edges in triple insertion
        order, then inverse edges, then STOP."""
        if entity not in self._outgoing:
            raise GraphError(f"unknown entity id: {entity}")
        actions = [Action(rel, False, obj) for rel, obj in self._outgoing[entity]]
        actions += [Action(rel, True, subj) for rel, subj in self._incoming[entity]]
        actions.append(stop_action(entity))
        return actions

    # -- serialization -----------------------------------------------------

    def to_lines(self) -> Iterator[str]:
        for t in self.triples:
            yield (f"{self.entity_names[t.subject]}\t{self.relation_names[t.predicate]}"
                   f"\t{self.entity_names[t.object]}")

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")


def _build(records: Iterable[tuple[int, str, str, str]]) -> KnowledgeGraph:
    entity_names: list[str] = []
    relation_names: list[str] = []
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    triples: list[Triple] = []
    seen: set[Triple] = set()

    # Interning is case-sensitive: "Ref" and "ref" are distinct graph nodes
    # (the alias lexicon later folds case and reports the collision).
    def intern_entity(name: str) -> int:
        if name not in entity_ids:
            entity_ids[name] = len(entity_names)
            entity_names.append(name)
        return entity_ids[name]

    def intern_relation(name: str) -> int:
        if name not in relation_ids:
            relation_ids[name] = len(relation_names)
            relation_names.append(name)
        return relation_ids[name]

    count = 0
    for lineno, subj, pred, obj in records:
        count += 1
        if not (subj and pred and obj):
            raise KgParseError(lineno, "empty field in triple")
        t = Triple(intern_entity(subj), intern_relation(pred), intern_entity(obj))
        if t not in seen:
            seen.add(t)
            triples.append(t)
    if count == 0:
        raise GraphError("empty triple stream: graph would have no triples")
    return KnowledgeGraph(entity_names, relation_names, triples)


def load_kg_lines(lines: Iterable[str]) -> KnowledgeGraph:
    """Build a graph from `subject<TAB>relation<TAB>object` lines.

    Ids follow first appearance (subject, then object, relations separately);
    duplicate triples collapse; blank lines are skipped.
    """

    def records():
        for lineno, raw in enumerate(lines, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise KgParseError(lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            yield lineno, *(normalize_name(f) for f in fields)

    return _build(records())


def load_kg(path: str | Path) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as fh:
        return load_kg_lines(fh)


def build_kg(name_triples: Iterable[tuple[str, str, str]]) -> KnowledgeGraph:
    """Build a graph directly from (subject, relation, object) name triples."""
    return _build((i, normalize_name(s), normalize_name(p), normalize_name(o))
                  for i, (s, p, o) in enumerate(name_triples, start=1))


def validate_path(kg: KnowledgeGraph, path: Sequence[Triple]) -> SubGraph:
    """Check that `path` is a chain walkable in `kg` and resolve the traversal
    orientation of every step.

    Consecutive triples must share an endpoint: the walker's position after
    step i must be the subject (forward) or object (inverse) of step i+1.
    Orientation search prefers forward traversal, so the resolution is
    deterministic when both orientations chain.
    """
    if not path:
        raise GraphError("empty path")
    for i, t in enumerate(path):
        if t not in kg._triple_set:
            raise GraphError(
                f"triple at index {i} not in graph: "
                f"<{kg.entity_names[t.subject]}, {kg.relation_names[t.predicate]}, "
                f"{kg.entity_names[t.object]}>")

    deepest = 1  # first index at which every orientation assignment broke

    def search(i: int, position: int, flags: list[bool]) -> tuple[bool, ...] | None:
        nonlocal deepest
        if i == len(path):
            return tuple(flags)
        t = path[i]
        for inverse in (False, True):
            origin = t.object if inverse else t.subject
            if i > 0 and origin != position:
                continue
            nxt = t.subject if inverse else t.object
            flags.append(inverse)
            found = search(i + 1, nxt, flags)
            if found is not None:
                return found
            flags.pop()
        deepest = max(deepest, i)
        return None

    flags = search(0, -1, [])
    if flags is None:
        raise GraphError(f"broken chain at index {deepest}: step does not connect "
                         f"to the walker position")
    first = path[0]
    start = first.object if flags[0] else first.subject
    return SubGraph(tuple(path), flags, start)
