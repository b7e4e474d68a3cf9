"""Visible/infrared image fusion with an adversarially regularized
residual autoencoder, plus the objective metric suite used to score it."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DatasetManifest,
    ImagePair,
    PatchSpec,
    build_manifest,
    load_grayscale,
    sample_patches,
    save_grayscale,
    synthesize_dataset,
    synthesize_pair,
)
from .discriminator import Discriminator, DiscriminatorConfig, build_discriminator
from .generator import Generator, GeneratorConfig, build_generator, fuse_latents
from .losses import (
    LossReport,
    LossWeights,
    content_loss,
    disc_loss,
    gen_adv_loss,
    generator_total,
    mse,
)
from .metrics import (
    MetricRow,
    aggregate,
    entropy,
    evaluate,
    mutual_information,
    qabf,
    ssim_fusion,
    ssim_pair,
    vif_fusion,
    vif_pair,
)
from .optim import AdamState, adam_step
from .tensor import Tensor, backward, no_grad, tv_norm
from .training import (
    GridSpec,
    NumericsError,
    TrainConfig,
    TrainResult,
    evaluate_report,
    fuse_pair,
    grid_search,
    load_generator,
    train,
)

__version__ = "0.1.0"
