"""Contextual slot carryover for multi-turn, multi-schema dialogs."""

from .candidates import (
    CandidateConfig,
    CandidateSlot,
    collect_candidates,
    expand_entity,
    generate_candidates,
    label_candidates,
    transform_candidates,
)
from .data import (
    Dialog,
    SchemaCatalog,
    Slot,
    Turn,
    build_schema_catalog,
    demo_corpus_path,
    load_corpus,
    write_corpus,
)
from .embeddings import (
    EmbeddingTable,
    LabelEmbeddings,
    build_label_embeddings,
    embed_phrase,
    load_embeddings,
    load_label_embeddings,
    save_label_embeddings,
)
from .errors import ConfigError, CorpusError, EmbeddingError, SlotCarryError, TrainingError
from .evaluate import EvalReport, domain_breakdown, score, sweep
from .model import (
    CarryoverModel,
    ModelConfig,
    encode_act,
    encode_distance,
    encode_slot,
    encode_streams,
    load_checkpoint,
    predict_turn,
    save_checkpoint,
    score_candidate,
)
from .training import TrainConfig, class_weights, compute_loss, train

__version__ = "0.1.0"
