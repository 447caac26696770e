"""Cross-modal embedding toolkit: paired encoders trained with a hard-mined
triplet loss, adversarial modality alignment and translation-consistency
heads, evaluated with a median-rank retrieval protocol."""

from .config import HyperParams
from .data import Dataset, PairedBatch, SyntheticSpec, generate_dataset, load_dataset
from .losses import (
    LossBreakdown,
    i2r_losses,
    modality_alignment_losses,
    r2i_losses,
    total_loss,
    triplet_loss_all,
    triplet_loss_hard,
)
from .model import (
    EmbeddingBatch,
    ModelConfig,
    ModelParams,
    critic_score,
    embed_batch,
    generate_image,
    load_checkpoint,
    predict_ingredients,
    save_checkpoint,
)
from .retrieval import (
    RetrievalReport,
    evaluate_embeddings,
    evaluate_model,
    rank_one,
    sample_subsets,
    write_report,
)
from .tensor import euclidean_distance, finite_diff_check
from .trainer import AblationConfig, train, train_epoch

__version__ = "0.1.0"
