"""Cross-modal similarity transfer from frozen teacher embeddings."""

from .bundle import (
    AnchorSet,
    DatasetBundle,
    EmbeddingSet,
    l2_normalize,
    load_bundle,
    normalize_anchors,
    save_bundle,
    split_bundle,
)
from .errors import XmodalError
from .losses import (
    LossReport,
    LossSettings,
    SimilarityDistribution,
    cross_modal_similarity,
    csm_loss,
    ism_loss,
    kl_matching_loss,
    similarity_smoothing,
    total_loss,
)
from .model import (
    FeatureViewAugmenter,
    MomentumStudent,
    ProjectionHead,
    StudentModel,
    backward,
    ema_update,
    forward,
    infonce_loss,
    infonce_pretrain_step,
    init_student,
    load_checkpoint,
    save_checkpoint,
)
from .synthetic import SynthSpec, generate
from .trainer import TrainConfig, TrainState, run_pretrain, run_transfer, sgdr_lr, train_step
from .evaluation import (
    ProbeResult,
    RetrievalResult,
    linear_probe,
    prompt_sweep,
    retrieve_topk,
    zero_shot_classify,
)

__version__ = "0.1.0"
