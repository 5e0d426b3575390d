"""promosim: a desk-scale lab for text-promotion attacks on text-driven
recommenders and for detecting the LLM-rewritten item text they produce."""

from .corpus import (
    Catalog,
    DataSplit,
    Interaction,
    Item,
    PopularityIndex,
    chronological_split,
    ingest_catalog,
    popularity_partition,
    select_targets,
    write_catalog,
)
from .embedder import EmbedConfig, cosine, embed_text
from .errors import (
    AttackError,
    ConfigError,
    DataError,
    OptimizationError,
    ProbeError,
    PromosimError,
    ProtocolError,
    ReplayMissError,
    TrainingError,
    TransportError,
    UsageError,
)
from .harness import ExperimentConfig, run_experiment, write_report
from .llm_client import ChatMessage, ChatRequest, Transport, chat_complete, embed_remote
from .recommender import (
    AdaptorParams,
    ItemMatrix,
    RecommenderSnapshot,
    TrainConfig,
    build_item_reps,
    build_user_profiles,
    hit_ratio_at_k,
    recommend_topk,
    train_adaptor,
)

__version__ = "0.1.0"
