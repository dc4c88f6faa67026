"""Pipeline stages and their artifact contracts.

Each stage reads files produced by earlier stages and writes its own, so any
stage can be rerun standalone; the `pipeline` command is exactly the stage
composition. One global seed determines each stage's seed by a fixed offset
(synth +0, KG embedding +1, generator +2, reranker +3), resolved when the
config is built, so standalone runs and full runs see identical seeds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .generator import (Candidate, GeneratorConfig, GeneratorModel,
                        beam_generate, train_generator)
from .kg import KnowledgeGraph, load_kg
from .linking import build_lexicon
from .metrics import evaluate_responses
from .modelio import load_model  # noqa: F401  (re-exported for stage callers)
from .plots import plot_link_prediction, plot_loss_curve, plot_metric_comparison
from .prompting import load_corpus, save_corpus
from .reranker import (RerankerConfig, RerankerModel, rerank_scores,
                       train_reranker)
from .synth import synth_corpus
from .transe import KgEmbeddingTable, TransEConfig, link_prediction_eval, train_transe

STAGE_OFFSETS = {"synth": 0, "train-kg": 1, "train-gen": 2, "train-rr": 3}


class PipelineError(Exception):
    """A stage failed; the message names the stage and cause."""


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    n_entities: int = 50
    n_samples: int = 300
    transe: TransEConfig = field(default_factory=TransEConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    reranker: RerankerConfig = field(default_factory=RerankerConfig)


def make_config(data: dict) -> PipelineConfig:
    """Build a config from a plain dict (JSON file shape). Stage seeds default
    to the global seed plus the stage offset unless given explicitly."""
    data = dict(data)
    seed = int(data.pop("seed", 0))
    sub = {}
    for key, cls, offset in (("transe", TransEConfig, 1),
                             ("generator", GeneratorConfig, 2),
                             ("reranker", RerankerConfig, 3)):
        params = dict(data.pop(key, {}))
        params.setdefault("seed", seed + offset)
        sub[key] = cls(**params)
    known = {"out_dir", "n_entities", "n_samples"}
    unknown = set(data) - known
    if unknown:
        raise PipelineError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(seed=seed, **{k: data[k] for k in known & set(data)}, **sub)


@dataclass(frozen=True)
class Paths:
    root: Path

    @property
    def data(self) -> Path: return self.root / "data"
    @property
    def models(self) -> Path: return self.root / "models"
    @property
    def reports(self) -> Path: return self.root / "reports"
    @property
    def figures(self) -> Path: return self.root / "figures"

    @property
    def kg(self) -> Path: return self.data / "kg.tsv"
    @property
    def train(self) -> Path: return self.data / "train.jsonl"
    @property
    def valid(self) -> Path: return self.data / "valid.jsonl"
    @property
    def test(self) -> Path: return self.data / "test.jsonl"
    @property
    def table(self) -> Path: return self.models / "embeddings.tsv"
    @property
    def generator(self) -> Path: return self.models / "generator.json"
    @property
    def reranker(self) -> Path: return self.models / "reranker.json"
    @property
    def kg_eval(self) -> Path: return self.reports / "kg_eval.json"
    @property
    def generation(self) -> Path: return self.reports / "generation.jsonl"
    @property
    def rerank(self) -> Path: return self.reports / "rerank.jsonl"
    @property
    def evaluation(self) -> Path: return self.reports / "evaluation.json"
    @property
    def details(self) -> Path: return self.reports / "evaluation_details.jsonl"

    def ensure(self) -> "Paths":
        for d in (self.data, self.models, self.reports, self.figures):
            d.mkdir(parents=True, exist_ok=True)
        return self


def paths_for(cfg: PipelineConfig) -> Paths:
    return Paths(Path(cfg.out_dir)).ensure()


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def stage_synth(cfg: PipelineConfig) -> None:
    p = paths_for(cfg)
    result = synth_corpus(cfg.n_entities, cfg.n_samples, cfg.seed + STAGE_OFFSETS["synth"])
    result.kg.save(p.kg)
    save_corpus(p.train, result.train, result.kg)
    save_corpus(p.valid, result.valid, result.kg)
    save_corpus(p.test, result.test, result.kg)


def stage_train_kg(cfg: PipelineConfig) -> None:
    p = paths_for(cfg)
    kg = load_kg(p.kg)
    losses: list[float] = []
    table = train_transe(kg, cfg.transe, on_epoch=lambda e, l: losses.append(l))
    table.save(p.table)
    plot_loss_curve(losses, "KG embedding training", p.figures / "transe_loss.png")


def stage_eval_kg(cfg: PipelineConfig) -> dict:
    p = paths_for(cfg)
    kg = load_kg(p.kg)
    table = KgEmbeddingTable.load(p.table)
    report = {mode: link_prediction_eval(kg, table, mode) for mode in ("raw", "filter")}
    _write_json(p.kg_eval, report)
    plot_link_prediction(report["raw"], report["filter"], p.figures / "kg_eval.png")
    return report


def stage_train_gen(cfg: PipelineConfig) -> None:
    p = paths_for(cfg)
    kg = load_kg(p.kg)
    table = KgEmbeddingTable.load(p.table)
    corpus = load_corpus(p.train, kg)
    losses: list[float] = []
    model = train_generator(corpus, kg, table, cfg.generator,
                            on_epoch=lambda e, l: losses.append(l))
    model.save(p.generator)
    plot_loss_curve(losses, "generator training", p.figures / "generator_loss.png")


def stage_train_rr(cfg: PipelineConfig) -> None:
    p = paths_for(cfg)
    kg = load_kg(p.kg)
    table = KgEmbeddingTable.load(p.table)
    corpus = load_corpus(p.train, kg)
    losses: list[float] = []
    model = train_reranker(corpus, kg, table, cfg.reranker,
                           on_epoch=lambda e, l: losses.append(l))
    model.save(p.reranker)
    plot_loss_curve(losses, "reranker training", p.figures / "reranker_loss.png")


def stage_generate(cfg: PipelineConfig) -> None:
    p = paths_for(cfg)
    kg = load_kg(p.kg)
    model = GeneratorModel.load(p.generator)
    corpus = load_corpus(p.test, kg)
    lexicon = build_lexicon(kg)
    rows = []
    for i, sample in enumerate(corpus):
        candidates = beam_generate(model, sample, kg, lexicon)
        rows.append({
            "index": i,
            "candidates": [{"text": c.text, "log_prob": c.log_prob,
                            "tokens": list(c.tokens), "forced": c.forced}
                           for c in candidates],
        })
    _write_jsonl(p.generation, rows)


def stage_rerank(cfg: PipelineConfig) -> None:
    p = paths_for(cfg)
    kg = load_kg(p.kg)
    model = RerankerModel.load(p.reranker)
    corpus = load_corpus(p.test, kg)
    gen_rows = _read_jsonl(p.generation)
    if len(gen_rows) != len(corpus):
        raise PipelineError(f"{len(gen_rows)} generation rows vs {len(corpus)} test samples")
    rows = []
    for sample, gen in zip(corpus, gen_rows):
        candidates = [Candidate(tuple(c["tokens"]), c["log_prob"], c["text"], c["forced"])
                      for c in gen["candidates"]]
        scores = rerank_scores(model, sample.history, sample.sub_graph, candidates, kg)
        selected = max(range(len(scores)), key=lambda i: (scores[i], -i))
        rows.append({
            "index": gen["index"],
            "candidates": [c.text for c in candidates],
            "path_log_probs": scores,
            "selected": selected,
        })
    _write_jsonl(p.rerank, rows)


def stage_evaluate(cfg: PipelineConfig) -> dict:
    p = paths_for(cfg)
    kg = load_kg(p.kg)
    corpus = load_corpus(p.test, kg)
    lexicon = build_lexicon(kg)
    gen_rows = _read_jsonl(p.generation)
    rr_rows = _read_jsonl(p.rerank)
    if len(gen_rows) != len(corpus) or len(rr_rows) != len(corpus):
        raise PipelineError("generation/rerank reports do not match the test split")
    top_beam = [row["candidates"][0]["text"] for row in gen_rows]
    reranked = [rr["candidates"][rr["selected"]] for rr in rr_rows]
    top_summary, top_details = evaluate_responses(corpus, top_beam, lexicon)
    rr_summary, rr_details = evaluate_responses(corpus, reranked, lexicon)
    report = {
        "top_beam": top_summary,
        "reranked": rr_summary,
        "delta": {k: rr_summary[k] - top_summary[k]
                  for k in ("bleu4", "rouge_l_mean", "entity_f1")},
    }
    _write_json(p.evaluation, report)
    _write_jsonl(p.details, [{"reference": t["reference"], "top_beam": t, "reranked": r}
                             for t, r in zip(top_details, rr_details)])
    plot_metric_comparison(top_summary, rr_summary, p.figures / "metrics_comparison.png")
    return report


_STAGES = (
    ("synth", stage_synth),
    ("train-kg", stage_train_kg),
    ("eval-kg", stage_eval_kg),
    ("train-gen", stage_train_gen),
    ("train-rr", stage_train_rr),
    ("generate", stage_generate),
    ("rerank", stage_rerank),
    ("evaluate", stage_evaluate),
)

STAGES = dict(_STAGES)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """All stages in order; returns the final evaluation report."""
    report = None
    for name, fn in _STAGES:
        try:
            report = fn(cfg)
        except Exception as exc:
            raise PipelineError(f"stage {name} failed: {exc}") from exc
    d = report["delta"]["entity_f1"]
    print(f"entity F1 top-beam {report['top_beam']['entity_f1']:.4f} -> "
          f"reranked {report['reranked']['entity_f1']:.4f} (delta {d:+.4f})")
    return report
