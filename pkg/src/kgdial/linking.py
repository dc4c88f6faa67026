"""Deterministic entity/relation mention linking.

A closed-world alias lexicon is built from the graph's surface names and
matched against text with greedy longest-match, left to right, case
insensitive, on token boundaries. This replaces statistical NER: the
pipeline only ever needs mention -> node links into a known vocabulary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .kg import KnowledgeGraph, normalize_name

log = logging.getLogger(__name__)

ENTITY = "entity"
RELATION = "relation"

# Preposition tails stripped to form relation stem aliases
# ("directed_by" -> "directed"); dialogue rarely utters predicates verbatim.
_PREPOSITIONS = frozenset({
    "by", "of", "in", "on", "at", "for", "with", "to", "from", "as", "about",
})


class LexiconError(Exception):
    """Alias collisions that cannot be resolved automatically."""


@dataclass(frozen=True)
class LinkedSpan:
    """A [start, end) character span linked to a graph node."""

    start: int
    end: int
    node: int
    kind: str  # ENTITY or RELATION


def scan_tokens(text: str) -> list[tuple[int, int]]:
    """Split into (start, end) spans: maximal alphanumeric runs plus single
    non-space punctuation characters. Whitespace never appears in a token."""
    spans = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch.isalnum():
            j = i + 1
            while j < n and text[j].isalnum():
                j += 1
            spans.append((i, j))
            i = j
        else:
            spans.append((i, i + 1))
            i += 1
    return spans


def alias_key(surface: str) -> str:
    return normalize_name(surface).lower()


class AliasLexicon:
    """Normalized alias -> node id maps for entities and relations."""

    def __init__(self, entity_aliases: dict[str, int], relation_aliases: dict[str, int]):
        self.entity_aliases = dict(entity_aliases)
        self.relation_aliases = dict(relation_aliases)
        self._max_tokens = max(
            (len(scan_tokens(k)) for k in (*self.entity_aliases, *self.relation_aliases)),
            default=0)

    def restrict(self, entities: set[int], relations: set[int]) -> "AliasLexicon":
        """Sub-lexicon covering only the given node ids (e.g. one sample's
        sub-graph vocabulary)."""
        return AliasLexicon(
            {a: e for a, e in self.entity_aliases.items() if e in entities},
            {a: r for a, r in self.relation_aliases.items() if r in relations},
        )


def _relation_aliases_for(name: str) -> list[str]:
    raw = alias_key(name)
    aliases = [raw]
    split = " ".join(raw.split("_"))
    split = alias_key(split)
    if split != raw:
        aliases.append(split)
    words = split.split()
    if len(words) > 1 and words[-1] in _PREPOSITIONS:
        aliases.append(" ".join(words[:-1]))
    return aliases


def _insert(table: dict[str, int], alias: str, node: int, kind: str) -> None:
    prev = table.get(alias)
    if prev is None:
        table[alias] = node
    elif prev != node:
        keep = min(prev, node)
        log.warning("%s alias %r collides (ids %d and %d); keeping id %d",
                    kind, alias, prev, node, keep)
        table[alias] = keep


def build_lexicon(kg: KnowledgeGraph, sidecar: str | Path | None = None) -> AliasLexicon:
    """One alias per entity name; raw, underscore-split, and stem aliases per
    relation name. An alias shared between the entity and relation tables is a
    hard error; collisions within a table keep the lowest id and warn."""
    entity_aliases: dict[str, int] = {}
    relation_aliases: dict[str, int] = {}
    for i, name in enumerate(kg.entity_names):
        _insert(entity_aliases, alias_key(name), i, ENTITY)
    for i, name in enumerate(kg.relation_names):
        for alias in _relation_aliases_for(name):
            _insert(relation_aliases, alias, i, RELATION)
    if sidecar is not None:
        for kind, alias, node in _read_sidecar(sidecar, kg):
            # Sidecar entries are explicit, so they override generated aliases.
            if kind == ENTITY:
                entity_aliases[alias] = node
            else:
                relation_aliases[alias] = node
    shared = sorted(set(entity_aliases) & set(relation_aliases))
    if shared:
        raise LexiconError(f"aliases bound to both an entity and a relation: {shared}")
    return AliasLexicon(entity_aliases, relation_aliases)


def _read_sidecar(path: str | Path, kg: KnowledgeGraph) -> Iterable[tuple[str, str, int]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise LexiconError(f"{path}:{lineno}: expected kind<TAB>alias<TAB>name")
            kind, alias, name = fields
            if kind not in (ENTITY, RELATION):
                raise LexiconError(f"{path}:{lineno}: unknown kind {kind!r}")
            node = kg.entity_id(name) if kind == ENTITY else kg.relation_id(name)
            yield kind, alias_key(alias), node


def link_mentions(text: str, lexicon: AliasLexicon) -> list[LinkedSpan]:
    """Greedy longest-match linking over token boundaries.

    A candidate span runs from the start of one token to the end of a later
    one; its surface must normalize exactly to a lexicon key. Matched spans
    never overlap and come back sorted by start offset.
    """
    tokens = scan_tokens(text)
    spans: list[LinkedSpan] = []
    i = 0
    while i < len(tokens):
        matched = False
        hi = min(len(tokens), i + lexicon._max_tokens)
        for j in range(hi, i, -1):
            start, end = tokens[i][0], tokens[j - 1][1]
            key = alias_key(text[start:end])
            node = lexicon.entity_aliases.get(key)
            if node is not None:
                spans.append(LinkedSpan(start, end, node, ENTITY))
            else:
                node = lexicon.relation_aliases.get(key)
                if node is not None:
                    spans.append(LinkedSpan(start, end, node, RELATION))
            if node is not None:
                i = j
                matched = True
                break
        if not matched:
            i += 1
    return spans
