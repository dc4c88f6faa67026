"""Command line entry point.

Every stage shares the same configuration surface: an optional JSON config
file, `--seed`/`--out` shortcuts, and one flag per nested config field using
its dotted name (e.g. `--generator.epochs 50`).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

from .generator import GeneratorConfig
from .pipeline import STAGES, PipelineConfig, make_config, run_pipeline
from .reranker import RerankerConfig
from .transe import TransEConfig

_SUBCONFIGS = {"transe": TransEConfig, "generator": GeneratorConfig,
               "reranker": RerankerConfig}

_STAGE_HELP = {
    "synth": "generate the synthetic KG and corpus splits",
    "train-kg": "train TransE embeddings over the KG",
    "eval-kg": "link-prediction evaluation (raw and filtered MR / Hits@10)",
    "train-gen": "train the grounded generator",
    "train-rr": "train the path-walk reranker",
    "generate": "beam-generate candidate responses for the test split",
    "rerank": "score candidates by path likelihood and select",
    "evaluate": "compute BLEU / ROUGE-L / entity coverage, before vs after",
    "pipeline": "run every stage in order",
}


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def _register_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="JSON config file")
    parser.add_argument("--seed", type=int, help="global seed; stage seeds derive from it")
    parser.add_argument("--out", dest="out_dir", metavar="DIR", help="output directory")
    parser.add_argument("--n-entities", type=int, dest="n_entities")
    parser.add_argument("--n-samples", type=int, dest="n_samples")
    for prefix, cls in _SUBCONFIGS.items():
        for f in fields(cls):
            if isinstance(f.default, bool):
                typ = _parse_bool
            elif isinstance(f.default, int):
                typ = int
            else:
                typ = type(f.default)
            parser.add_argument(f"--{prefix}.{f.name}", dest=f"{prefix}.{f.name}",
                                type=typ, help=argparse.SUPPRESS)


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    data: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    ns = vars(args)
    for key in ("seed", "out_dir", "n_entities", "n_samples"):
        if ns.get(key) is not None:
            data[key] = ns[key]
    for name, value in ns.items():
        if value is None or "." not in name:
            continue
        prefix, field_name = name.split(".", 1)
        data.setdefault(prefix, {})[field_name] = value
    return make_config(data)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="kgdial",
        description="Knowledge-grounded dialogue at desk scale: KG embeddings, "
                    "grounded generation, and path-walk re-ranking.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _STAGE_HELP.items():
        _register_flags(sub.add_parser(name, help=help_text))
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "pipeline":
            run_pipeline(cfg)
        else:
            result = STAGES[args.command](cfg)
            if isinstance(result, dict):
                print(json.dumps(result, indent=2, sort_keys=True))
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
