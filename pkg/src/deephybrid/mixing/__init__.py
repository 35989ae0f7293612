"""Mixing operators (Models 1-6) and their Stage-I training."""
from .checkpoint import load_checkpoint, save_checkpoint
from .latents import build_latents, latent_blocks, region_latents_from_tiles, trip_latents
from .losses import (
    adaptive_alpha,
    loss_gan_d,
    loss_gan_g,
    loss_kl,
    loss_perceptual,
    loss_rec,
    loss_sup,
)
from .model import (
    ALPHA_FIXED,
    DELTA,
    LatentVector,
    MixingModel,
    Variant,
    decode,
    encode,
    supervise,
    total_loss,
)
from .nets import PerceptualExtractor
from .train import (
    DivergenceError,
    LossHistory,
    TrainConfig,
    build_trained,
    reconstruction_error,
    stage1_data,
    train_mixing,
)
