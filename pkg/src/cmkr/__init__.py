"""Cross-modal k-reciprocal re-ranking and retrieval evaluation."""

from .distance import DistMatrix, assemble_joint, divided_matrix, pairwise_euclidean
from .evaluation import MetricsReport, cmc, map_score, multi_trial_eval, rank
from .rerank import RerankConfig, cmkr_pipeline
from .store import EmbeddingSet, l2_normalize, load_embeddings, save_embeddings
from .synth import SynthConfig, bias_report, generate

__version__ = "0.1.0"
