"""Stage-I training of the mixing operators."""
import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from ..dataio import standardize
from ..rng import subseed
from .losses import loss_gan_d
from .model import MixingModel, Variant, to_tensor_images, total_loss

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    gan_start: int = 0
    log_every: int = 1


@dataclass
class Stage1Data:
    images: torch.Tensor      # T x C x H x W
    sd: torch.Tensor          # T x D, standardized region sd of each tile's region
    tile_region: np.ndarray
    sd_stats: object


def stage1_data(world, region_mask=None, sd_stats=None, dtype=torch.float32):
    """Tiles (and their regions' standardized sociodemographics) for training.

    ``region_mask`` restricts to a subset of regions; standardization stats
    are fitted on that subset unless given.
    """
    n = len(world.regions)
    mask = np.ones(n, bool) if region_mask is None else np.asarray(region_mask, bool)
    sd = world.sd_matrix
    if sd_stats is None:
        _, sd_stats = standardize(sd[mask])
    sd_std, _ = standardize(sd, sd_stats)
    keep = mask[world.tile_region]
    tiles = world.tiles[keep]
    tr = world.tile_region[keep]
    return Stage1Data(
        images=to_tensor_images(tiles, dtype),
        sd=torch.as_tensor(sd_std[tr], dtype=dtype),
        tile_region=tr,
        sd_stats=sd_stats,
    )


class LossHistory(list):
    """Rows of ``(step, term, value)``."""

    def terms(self):
        return sorted({t for _, t, _ in self})

    def series(self, term):
        return np.array([v for _, t, v in self if t == term])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "term", "value"])
            for step, term, value in self:
                w.writerow([step, term, repr(float(value))])


def _set_requires_grad(params, flag):
    for p in params:
        p.requires_grad_(flag)


def train_mixing(m, data, config=None):
    """Train ``m`` in place by Adam; returns ``(m, LossHistory)``.

    ``data`` is a :class:`Stage1Data` or a World (all regions used). For
    generative variants each step first updates encoder, decoder and
    supervision head with the discriminator frozen, then the discriminator
    with everything else frozen.
    """
    config = config or TrainConfig()
    if not m.variant.trainable:
        raise ValueError(f"variant {m.variant.name} is not trainable")
    if not isinstance(data, Stage1Data):
        data = stage1_data(data, dtype=m.dtype)
    n = len(data.images)
    if n == 0:
        raise ValueError("no training tiles")
    g_shuffle = torch.Generator().manual_seed(subseed(config.seed, "shuffle"))
    g_noise = torch.Generator().manual_seed(subseed(config.seed, "noise"))
    gen_params = m.generator_parameters()
    disc_params = m.discriminator_parameters()
    opt_g = torch.optim.Adam(gen_params, lr=config.lr)
    opt_d = torch.optim.Adam(disc_params, lr=config.lr, betas=(0.5, 0.9)) if disc_params else None
    history = LossHistory()
    order = torch.randperm(n, generator=g_shuffle)
    pos = 0
    m.train()
    for step in range(config.steps):
        if pos + config.batch_size > n:
            order = torch.randperm(n, generator=g_shuffle)
            pos = 0
        idx = order[pos:pos + config.batch_size]
        pos += config.batch_size
        batch = {"images": data.images[idx], "sd": data.sd[idx]}

        _set_requires_grad(disc_params, False)
        opt_g.zero_grad(set_to_none=True)
        total, terms = total_loss(m, batch, generator=g_noise,
                                  gan=m.variant.generative and step >= config.gan_start)
        if not math.isfinite(total.item()):
            raise DivergenceError(f"non-finite total loss at step {step}: {terms}")
        total.backward()
        opt_g.step()
        _set_requires_grad(disc_params, True)

        if opt_d is not None and step >= config.gan_start:
            with torch.no_grad():
                z, _, _ = m.encode_t(batch["images"], sample=True, generator=g_noise)
                fake = m.decode_t(z)
            opt_d.zero_grad(set_to_none=True)
            _set_requires_grad(gen_params, False)
            l_d = loss_gan_d(m.discriminator(batch["images"]), m.discriminator(fake))
            l_d.backward()
            opt_d.step()
            _set_requires_grad(gen_params, True)
            terms["gan_d"] = l_d.item()
            if not math.isfinite(terms["gan_d"]):
                raise DivergenceError(f"non-finite discriminator loss at step {step}")

        if step % config.log_every == 0 or step == config.steps - 1:
            history.append((step, "total", total.item()))
            for k, v in terms.items():
                history.append((step, k, v))
    m.steps_trained += config.steps
    m.eval()
    return m, history


def reconstruction_error(m, images, batch_size=256):
    """Mean per-tile L1 reconstruction loss at inference (latent = mean)."""
    x = images if isinstance(images, torch.Tensor) else to_tensor_images(images, m.dtype)
    tot = 0.0
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            xb = x[i:i + batch_size]
            z, _, _ = m.encode_t(xb)
            tot += float((xb - m.decode_t(z)).abs().sum())
    return tot / len(x)


def build_trained(variant, world, *, lam=0.7, latent_dim=None, config=None, region_mask=None,
                  seed=0):
    """Construct and train a mixing model on ``world``; returns (model, history, data)."""
    variant = Variant(variant)
    config = config or TrainConfig(seed=seed)
    tile_size = world.tiles.shape[1]
    m = MixingModel(variant, latent_dim=latent_dim, lam=lam, sd_dim=world.sd_matrix.shape[1],
                    image_size=tile_size, channels=world.tiles.shape[3],
                    seed=subseed(seed, "init", variant.name))
    data = stage1_data(world, region_mask)
    if not variant.trainable:
        return m, LossHistory(), data
    m, hist = train_mixing(m, data, config)
    return m, hist, data
