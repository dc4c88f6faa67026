"""Knowledge-grounded dialogue at desk scale.

From-scratch pieces of a grounded dialogue pipeline: TransE KG embeddings,
deterministic alias linking, a grounded toy transformer generator with beam
search, an LSTM graph-walk reranker, faithfulness metrics, and a seeded
end-to-end pipeline over a synthetic movie corpus.
"""

__version__ = "0.1.0"

from .kg import (Action, GraphError, KnowledgeGraph, SubGraph, Triple,
                 build_kg, load_kg, stop_action, validate_path)
from .linking import AliasLexicon, LinkedSpan, build_lexicon, link_mentions
from .prompting import (DialogueSample, TokenSequence, Vocab, detokenize,
                        encode_sample, load_corpus, parse_input, save_corpus,
                        serialize_input, tokenize)
from .transe import (KgEmbeddingTable, TransEConfig, link_prediction_eval,
                     train_transe, transe_score)
from .grounding import (GroundingParams, MemoryBank, build_memory_bank, fuse,
                        global_grounding, local_grounding)
from .generator import (Candidate, GeneratorConfig, GeneratorModel,
                        beam_generate, train_generator)
from .reranker import (RerankerConfig, RerankerModel, action_embed,
                       path_beam_hits_at_k, path_logprob, select_response,
                       sentence_embed, train_reranker)
from .metrics import CoverageReport, bleu4, entity_coverage, rouge_l
from .synth import SynthResult, synth_corpus
from .pipeline import PipelineConfig, make_config, run_pipeline

__all__ = [
    "Action", "AliasLexicon", "Candidate", "CoverageReport", "DialogueSample",
    "GeneratorConfig", "GeneratorModel", "GraphError", "GroundingParams",
    "KgEmbeddingTable", "KnowledgeGraph", "LinkedSpan", "MemoryBank",
    "PipelineConfig", "RerankerConfig", "RerankerModel", "SubGraph",
    "SynthResult", "TokenSequence", "TransEConfig", "Triple", "Vocab",
    "action_embed", "beam_generate", "bleu4", "build_kg", "build_lexicon",
    "build_memory_bank", "detokenize", "encode_sample", "entity_coverage",
    "fuse", "global_grounding", "link_mentions", "link_prediction_eval",
    "load_corpus", "load_kg", "local_grounding", "make_config", "parse_input",
    "path_beam_hits_at_k", "path_logprob", "rouge_l", "run_pipeline",
    "save_corpus", "select_response", "sentence_embed", "serialize_input",
    "stop_action", "synth_corpus", "tokenize", "train_generator",
    "train_reranker", "train_transe", "transe_score", "validate_path",
]
