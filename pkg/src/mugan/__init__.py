"""Multi-attribute face editing with an attention U-Net GAN.

The generator is a symmetric U-Net whose skip connections pass through
additive attention gates and whose feature maps can carry self-attention
blocks; a WGAN critic with an auxiliary attribute head provides the
training signal. The package covers training, ablation variants,
reconstruction metrics, and a manipulation-accuracy protocol judged by an
independently trained attribute classifier.
"""

__version__ = "0.1.0"

from . import errors
from .attention import AttentionGate, SelfAttention2d
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ATTRIBUTE_NAMES,
    Batch,
    DatasetIndex,
    Record,
    apply_attribute_edit,
    celeba_loader,
    flip_attribute,
    iter_batches,
    load_celeba_index,
    load_index,
    make_target_labels,
    preprocess,
    render_synthetic_face,
    sample_batch,
    synthetic_index,
    synthetic_loader,
)
from .evaluation import (
    EvalReport,
    FULL_SCALE_REFERENCE,
    attribute_accuracy,
    eval_reconstruction,
    psnr,
    render_report,
    render_report_tsv,
    ssim,
)
from .losses import (
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    classification_loss,
    gradient_penalty,
    reconstruction_loss,
    total_loss_d,
    total_loss_g,
)
from .networks import (
    AttributeClassifier,
    Discriminator,
    Generator,
    VariantSpec,
    build_variant,
    count_parameters,
)
from .training import (
    ClassifierConfig,
    TrainConfig,
    Trainer,
    classifier_accuracy,
    learning_rate,
    load_classifier,
    load_generator,
    save_classifier,
    train_classifier,
)

__all__ = [
    "ATTRIBUTE_NAMES",
    "AttentionGate",
    "AttributeClassifier",
    "Batch",
    "ClassifierConfig",
    "DatasetIndex",
    "Discriminator",
    "EvalReport",
    "FULL_SCALE_REFERENCE",
    "Generator",
    "LossWeights",
    "Record",
    "SelfAttention2d",
    "TrainConfig",
    "Trainer",
    "VariantSpec",
    "adversarial_loss_d",
    "adversarial_loss_g",
    "apply_attribute_edit",
    "attribute_accuracy",
    "build_variant",
    "celeba_loader",
    "classification_loss",
    "classifier_accuracy",
    "count_parameters",
    "errors",
    "eval_reconstruction",
    "flip_attribute",
    "gradient_penalty",
    "iter_batches",
    "learning_rate",
    "load_celeba_index",
    "load_checkpoint",
    "load_classifier",
    "load_generator",
    "load_index",
    "make_target_labels",
    "preprocess",
    "psnr",
    "reconstruction_loss",
    "render_report",
    "render_report_tsv",
    "render_synthetic_face",
    "sample_batch",
    "save_checkpoint",
    "save_classifier",
    "ssim",
    "synthetic_index",
    "synthetic_loader",
    "total_loss_d",
    "total_loss_g",
    "train_classifier",
]
