"""Deterministic synthetic movie-domain KG and dialogue corpus.

Every sample's gold response verbalizes its annotated path and always names
the path's tail entity, so both the generator (copy the grounded answer) and
the walker (follow the entity named in the response) have learnable signal.
Roughly 45% of samples use 2-hop paths that traverse one edge backwards,
which keeps inverse-action handling on the hot path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph, build_kg, validate_path
from .prompting import DialogueSample

DIRECTED_BY = "directed_by"
STARRED_ACTORS = "starred_actors"
HAS_GENRE = "has_genre"

_ADJECTIVES = (
    "Crimson", "Silent", "Golden", "Hidden", "Broken", "Electric", "Frozen",
    "Burning", "Lonely", "Savage", "Gentle", "Hollow", "Iron", "Lucky",
    "Midnight", "Off-World", "Paper", "Scarlet", "Velvet", "Wandering",
)
_NOUNS = (
    "Planet", "River", "Crown", "Garden", "Harbor", "Engine", "Compass",
    "Orchard", "Lantern", "Mirror", "Voyage", "Castle", "Meadow", "Signal",
    "Archive", "Summit", "Tempest", "Parade", "Cipher", "Horizon",
)
_FIRST_NAMES = (
    "Ava", "Bruno", "Carmen", "Dexter", "Elena", "Felix", "Greta", "Hugo",
    "Iris", "Jonas", "Kira", "Lionel", "Mara", "Nestor", "Opal", "Pablo",
    "Quinn", "Rosa", "Soren", "Tilda",
)
_LAST_NAMES = (
    "Brennan", "Castillo", "Delacroix", "Eastwood", "Fairbanks", "Grimaldi",
    "Holloway", "Ishikawa", "Jansen", "Kowalski", "Lindqvist", "Moreau",
    "Navarro", "O'Brien", "Petrov", "Quintana", "Rasmussen", "Silva",
    "Thornton", "Ueda",
)
_GENRES = (
    "action", "comedy", "drama", "horror", "romance", "thriller",
    "science fiction", "fantasy", "mystery", "animation", "western",
    "documentary",
)

# Template kinds: three 1-hop, two 2-hop (inverse second edge).
_KIND_WEIGHTS = (0.20, 0.175, 0.175, 0.225, 0.225)
_PREAMBLE_RATE = 0.3


@dataclass
class SynthResult:
    kg: KnowledgeGraph
    train: list[DialogueSample]
    valid: list[DialogueSample]
    test: list[DialogueSample]

    def all_samples(self) -> list[DialogueSample]:
        return self.train + self.valid + self.test


def _movie_name(i: int) -> str:
    # Diagonal pairing keeps both words varying from i=0 while staying
    # injective over the full 400-pair product.
    base = f"The {_ADJECTIVES[i % 20]} {_NOUNS[(i + i // 20) % 20]}"
    return base if i < 400 else f"{base} {i // 400 + 1}"


def _person_name(i: int) -> str:
    base = f"{_FIRST_NAMES[i % 20]} {_LAST_NAMES[(i + i // 20) % 20]}"
    return base if i < 400 else f"{base} {i // 400 + 1}"


def synth_corpus(n_entities: int, n_samples: int, seed: int) -> SynthResult:
    """Movie KG plus templated dialogues, split 8:1:1 after shuffling."""
    if n_entities < 10:
        raise ValueError(f"need at least 10 entities, got {n_entities}")
    if n_samples < 30:
        raise ValueError(f"need at least 30 samples, got {n_samples}")
    rng = np.random.default_rng(seed)

    n_genres = max(2, min(12, n_entities // 10))
    n_directors = max(2, n_entities // 5)
    n_actors = max(3, (3 * n_entities) // 10)
    n_movies = n_entities - n_genres - n_directors - n_actors
    if n_movies < max(3, n_directors, n_actors, n_genres):
        raise ValueError(f"{n_entities} entities leave no room for movies")

    movies = [_movie_name(i) for i in range(n_movies)]
    directors = [_person_name(i) for i in range(n_directors)]
    actors = [_person_name(n_directors + i) for i in range(n_actors)]
    genres = list(_GENRES[:n_genres])

    directors_of: dict[str, list[str]] = {}
    actors_of: dict[str, list[str]] = {}
    genres_of: dict[str, list[str]] = {}
    triples: list[tuple[str, str, str]] = []
    # Every movie gets two directors, two or three actors, and two genres, so
    # no question has a history-determined answer: the response is always what
    # picks the gold edge. The first movies absorb director/actor/genre i so
    # every pool entity appears in at least one triple (n_entities is exact).
    for mi, movie in enumerate(movies):
        picked = list(rng.choice(n_directors, size=2, replace=False))
        if mi < n_directors and mi not in picked:
            picked[0] = mi
        directors_of[movie] = [directors[i] for i in picked]
        triples.extend((movie, DIRECTED_BY, directors[i]) for i in picked)
        k_act = int(rng.integers(2, min(3, n_actors) + 1))
        chosen = list(rng.choice(n_actors, size=k_act, replace=False))
        if mi < n_actors and mi not in chosen:
            chosen[0] = mi
        cast = [actors[i] for i in chosen]
        actors_of[movie] = cast
        triples.extend((movie, STARRED_ACTORS, actor) for actor in cast)
        tagged = list(rng.choice(n_genres, size=2, replace=False))
        if mi < n_genres and mi not in tagged:
            tagged[0] = mi
        genres_of[movie] = [genres[i] for i in tagged]
        triples.extend((movie, HAS_GENRE, genres[i]) for i in tagged)
    kg = build_kg(triples)

    movies_by_director: dict[str, list[str]] = {}
    for movie in movies:
        for director in directors_of[movie]:
            movies_by_director.setdefault(director, []).append(movie)
    movies_by_actor: dict[str, list[str]] = {}
    for movie in movies:
        for actor in actors_of[movie]:
            movies_by_actor.setdefault(actor, []).append(movie)
    samples = []
    movie_queue: list[str] = []
    for _ in range(n_samples):
        # Round-robin over shuffled movie permutations: every movie gets an
        # even share of questions, so no entity is starved of training signal.
        if not movie_queue:
            movie_queue = [movies[int(i)] for i in rng.permutation(n_movies)]
        movie = movie_queue.pop()
        kind = int(rng.choice(5, p=_KIND_WEIGHTS))
        if kind == 3:
            hubs = [d for d in directors_of[movie] if len(movies_by_director[d]) >= 2]
            if not hubs:
                kind = 0
        if kind == 4:
            stars = [a for a in actors_of[movie] if len(movies_by_actor[a]) >= 2]
            if not stars:
                kind = 2
        if kind == 0:
            pool = directors_of[movie]
            director = pool[int(rng.integers(len(pool)))]
            question = f"Who directed {movie}?"
            response = f"{movie} was directed by {director}."
            path = [(movie, DIRECTED_BY, director)]
        elif kind == 1:
            genre = genres_of[movie][int(rng.integers(len(genres_of[movie])))]
            question = f"What genre is {movie}?"
            response = f"{movie} is a {genre} film."
            path = [(movie, HAS_GENRE, genre)]
        elif kind == 2:
            cast = actors_of[movie]
            actor = cast[int(rng.integers(len(cast)))]
            question = f"Who starred in {movie}?"
            response = f"{actor} starred in {movie}."
            path = [(movie, STARRED_ACTORS, actor)]
        elif kind == 3:
            director = hubs[int(rng.integers(len(hubs)))]
            others = [m for m in movies_by_director[director] if m != movie]
            second = others[int(rng.integers(len(others)))]
            question = f"What else did the director of {movie} make?"
            response = f"{director} also directed {second}."
            path = [(movie, DIRECTED_BY, director), (second, DIRECTED_BY, director)]
        else:
            actor = stars[int(rng.integers(len(stars)))]
            others = [m for m in movies_by_actor[actor] if m != movie]
            second = others[int(rng.integers(len(others)))]
            question = f"Which other film features an actor from {movie}?"
            response = f"{actor} also appeared in {second}."
            path = [(movie, STARRED_ACTORS, actor), (second, STARRED_ACTORS, actor)]

        if rng.random() < _PREAMBLE_RATE:
            history = (("user", f"Do you know {movie}?"),
                       ("assistant", f"Yes, I have heard of {movie}."),
                       ("user", question))
        else:
            history = (("user", question),)
        sub_graph = validate_path(kg, [kg.resolve_triple(*t) for t in path])
        samples.append(DialogueSample(history, sub_graph, response))

    order = rng.permutation(n_samples)
    shuffled = [samples[i] for i in order]
    n_train = (8 * n_samples) // 10
    n_valid = n_samples // 10
    return SynthResult(kg, shuffled[:n_train],
                       shuffled[n_train:n_train + n_valid],
                       shuffled[n_train + n_valid:])


def two_hop_fraction(samples) -> float:
    return sum(s.sub_graph.triple_count > 1 for s in samples) / len(samples)
