"""Prompt serialization and tokenization for the grounded generator.

The encoder input is one flat string: the sample's triples, then the dialogue
turns, glued together with reserved marker tokens. Tokenization is rule-based
word/punctuation splitting over a closed vocabulary; each token remembers
which linked mention (if any) contains it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .kg import KnowledgeGraph, SubGraph, validate_path
from .linking import AliasLexicon, LinkedSpan, link_mentions

SEP, TRIPLE, USER, ASSISTANT, PAD, BOS, EOS, UNK = range(8)
MARKERS = ("<sep>", "<triple>", "<user>", "<assistant>", "<pad>", "<bos>", "<eos>")
UNK_TOKEN = "<unk>"
RESERVED = MARKERS + (UNK_TOKEN,)

KNOWLEDGE_PREFIX = "Given the knowledge: "
HISTORY_LIMIT = 3  # most recent utterances kept

# Invisible joiner injected after '<' to defuse literal markers in user text.
_ZWJ = "‍"


class PromptError(Exception):
    """Malformed prompt text, vocab file, or dialogue sample."""


def escape_markers(text: str) -> str:
    """Make reserved marker strings inert so they survive serialization.

    Existing joiners are doubled first, then one joiner is slipped in after
    each marker's '<'. unescape_markers inverts both steps exactly, so the
    escape is injective and serialized text never contains a live marker
    except the ones the template itself emits.
    """
    text = text.replace(_ZWJ, _ZWJ + _ZWJ)
    for marker in RESERVED:
        text = text.replace(marker, "<" + _ZWJ + marker[1:])
    return text


def unescape_markers(text: str) -> str:
    for marker in RESERVED:
        text = text.replace("<" + _ZWJ + marker[1:], marker)
    return text.replace(_ZWJ + _ZWJ, _ZWJ)


def scan_prompt_tokens(text: str) -> list[tuple[int, int]]:
    """linking.scan_tokens plus marker awareness: a literal reserved marker
    is a single token instead of '<', name, '>'."""
    spans = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        marker = _marker_at(text, i)
        if marker is not None:
            spans.append((i, i + len(marker)))
            i += len(marker)
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


def _marker_at(text: str, i: int) -> str | None:
    if text[i] != "<":
        return None
    for marker in RESERVED:
        if text.startswith(marker, i):
            return marker
    return None


class Vocab:
    """Token string <-> id table. Markers own ids 0..6, `<unk>` id 7."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise PromptError("vocab must start with the reserved tokens "
                              f"{RESERVED}")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise PromptError("duplicate token in vocab")

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self._tokens)

    def id_of(self, token: str) -> int:
        """Unknown tokens map to `<unk>`; the vocab never grows implicitly."""
        return self._ids.get(token, UNK)

    def token_of(self, tid: int) -> str:
        if not 0 <= tid < len(self._tokens):
            raise PromptError(f"token id {tid} outside vocab of {len(self._tokens)}")
        return self._tokens[tid]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        tokens = list(RESERVED)
        seen = set(tokens)
        for text in texts:
            for start, end in scan_prompt_tokens(text):
                tok = text[start:end]
                if tok not in seen:
                    seen.add(tok)
                    tokens.append(tok)
        return cls(tokens)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self._tokens):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens = []
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 2 or fields[1] != str(len(tokens)):
                    raise PromptError(f"{path}:{lineno}: expected token<TAB>{len(tokens)}")
                tokens.append(fields[0])
        return cls(tokens)


@dataclass(frozen=True)
class DialogueSample:
    """One grounded dialogue turn: history, annotated path, gold response."""

    history: tuple[tuple[str, str], ...]  # (speaker, text) pairs
    sub_graph: SubGraph
    response: str | None = None  # absent at inference

    def __post_init__(self):
        if not self.history:
            raise PromptError("history must be non-empty")
        object.__setattr__(self, "history", tuple(self.history[-HISTORY_LIMIT:]))
        for speaker, _ in self.history:
            if speaker not in ("user", "assistant"):
                raise PromptError(f"unknown speaker {speaker!r}")


def serialize_history(history: Sequence[tuple[str, str]]) -> str:
    parts = []
    for speaker, text in history:
        parts.append(f"<{speaker}>")
        parts.append(escape_markers(text))
    return " ".join(parts)


def serialize_input(sample: DialogueSample, kg: KnowledgeGraph) -> str:
    """`Given the knowledge: S1 <sep> P1 <sep> O1 <triple> S2 ... <user> U1 ...`"""
    triples = []
    for t in sample.sub_graph.path:
        names = (kg.entity_name(t.subject), kg.relation_name(t.predicate),
                 kg.entity_name(t.object))
        triples.append(" <sep> ".join(escape_markers(n) for n in names))
    knowledge = " <triple> ".join(triples)
    return f"{KNOWLEDGE_PREFIX}{knowledge} {serialize_history(sample.history)}"


@dataclass(frozen=True)
class ParsedInput:
    triples: tuple[tuple[str, str, str], ...]  # (subject, predicate, object) names
    history: tuple[tuple[str, str], ...]


def parse_input(text: str) -> ParsedInput:
    """Inverse of serialize_input (names and utterances, unescaped)."""
    if not text.startswith(KNOWLEDGE_PREFIX):
        raise PromptError("serialized input must start with the knowledge prefix")
    pieces = re.split(r" (<user>|<assistant>) ", text[len(KNOWLEDGE_PREFIX):])
    if len(pieces) < 3 or len(pieces) % 2 == 0:
        raise PromptError("serialized input has no dialogue turns")
    triples = []
    for chunk in pieces[0].split(" <triple> "):
        fields = chunk.split(" <sep> ")
        if len(fields) != 3:
            raise PromptError(f"malformed knowledge section near {chunk!r}")
        triples.append(tuple(unescape_markers(f) for f in fields))
    history = tuple((marker[1:-1], unescape_markers(utt))
                    for marker, utt in zip(pieces[1::2], pieces[2::2]))
    return ParsedInput(tuple(triples), history)


@dataclass
class TokenSequence:
    """Token ids plus per-token source span and optional (node, kind) link."""

    tokens: list[int]
    spans: list[tuple[int, int]]
    links: list[tuple[int, str] | None]
    vocab: Vocab
    text: str

    def __len__(self) -> int:
        return len(self.tokens)

    def strings(self) -> list[str]:
        return [self.vocab.token_of(t) for t in self.tokens]


def tokenize(text: str, spans: Sequence[LinkedSpan], vocab: Vocab) -> TokenSequence:
    """Each token inherits the link of the LinkedSpan that fully contains its
    char span; reserved markers never carry a link."""
    ids: list[int] = []
    tok_spans: list[tuple[int, int]] = []
    links: list[tuple[int, str] | None] = []
    for start, end in scan_prompt_tokens(text):
        surface = text[start:end]
        link = None
        if surface not in RESERVED:
            for sp in spans:
                if sp.start <= start and end <= sp.end:
                    link = (sp.node, sp.kind)
                    break
        ids.append(vocab.id_of(surface))
        tok_spans.append((start, end))
        links.append(link)
    return TokenSequence(ids, tok_spans, links, vocab, text)


# Detokenization join rules: enough to render "X - Men 2" back as "X-Men 2"
# and to keep sentence punctuation tight.
_JOIN_BOTH = {"-", "'"}
_NO_SPACE_BEFORE = {".", ",", "!", "?", ";", ":", ")", "]", "%"}
_NO_SPACE_AFTER = {"(", "["}
_CONTROL = {PAD, BOS, EOS}


def detokenize(tokens: Sequence[int], vocab: Vocab) -> str:
    out: list[str] = []
    glue = False
    for tid in tokens:
        if tid in _CONTROL:
            continue
        tok = vocab.token_of(tid)
        if out and not glue and tok not in _JOIN_BOTH and tok not in _NO_SPACE_BEFORE:
            out.append(" ")
        out.append(tok)
        glue = tok in _JOIN_BOTH or tok in _NO_SPACE_AFTER
    return "".join(out)


def encode_sample(sample: DialogueSample, kg: KnowledgeGraph,
                  lexicon: AliasLexicon, vocab: Vocab) -> TokenSequence:
    """Serialize and tokenize with linking restricted to the sample's own
    sub-graph vocabulary (model inputs never link against the whole KG)."""
    text = serialize_input(sample, kg)
    local = lexicon.restrict(set(sample.sub_graph.entities()),
                             set(sample.sub_graph.relations()))
    return tokenize(text, link_mentions(text, local), vocab)


def load_corpus(path: str | Path, kg: KnowledgeGraph) -> list[DialogueSample]:
    """JSONL, one sample per line:
    {"history": [[speaker, text], ...], "path": [[s, p, o], ...], "response": text}
    Paths are validated and oriented against the graph on load."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                triples = [kg.resolve_triple(s, p, o) for s, p, o in rec["path"]]
                sub_graph = validate_path(kg, triples)
                sample = DialogueSample(
                    history=tuple((spk, txt) for spk, txt in rec["history"]),
                    sub_graph=sub_graph,
                    response=rec.get("response"),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise PromptError(f"{path}:{lineno}: bad sample: {exc}") from exc
            samples.append(sample)
    return samples


def save_corpus(path: str | Path, samples: Iterable[DialogueSample],
                kg: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            rec = {
                "history": [[spk, txt] for spk, txt in sample.history],
                "path": [[kg.entity_name(t.subject), kg.relation_name(t.predicate),
                          kg.entity_name(t.object)] for t in sample.sub_graph.path],
                "response": sample.response,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
