"""Mixing operators: variants, the model container and the composite loss."""
import enum
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .losses import (
    adaptive_alpha,
    grad_norm,
    loss_gan_g,
    loss_kl,
    loss_perceptual,
    loss_rec,
    loss_sup,
)
from .nets import Decoder, Discriminator, Encoder, PerceptualExtractor, SupervisionHead

ALPHA_FIXED = {"alpha_rec": 1.0, "alpha_kl": 1e-6, "alpha_lpips": 1.0}
DELTA = 1e-6


class Variant(enum.IntEnum):
    SD_ONLY = 1
    AE = 2
    CONCAT = 3
    SAE_BASIC = 4
    SAE_GEN_SMALL = 5
    SAE_GEN_LARGE = 6

    @property
    def trainable(self):
        return self in (Variant.AE, Variant.SAE_BASIC, Variant.SAE_GEN_SMALL, Variant.SAE_GEN_LARGE)

    @property
    def has_networks(self):
        return self is not Variant.SD_ONLY

    @property
    def supervised(self):
        return self in (Variant.SAE_BASIC, Variant.SAE_GEN_SMALL, Variant.SAE_GEN_LARGE)

    @property
    def generative(self):
        return self in (Variant.SAE_GEN_SMALL, Variant.SAE_GEN_LARGE)

    variational = generative


DEFAULT_LATENT = {
    Variant.SD_ONLY: 0,
    Variant.AE: 64,
    Variant.CONCAT: 64,
    Variant.SAE_BASIC: 64,
    Variant.SAE_GEN_SMALL: 8,
    Variant.SAE_GEN_LARGE: 64,
}


@dataclass
class LatentVector:
    """Latent codes; ``mean``/``log_variance`` are set for variational heads."""

    z: np.ndarray
    mean: np.ndarray = None
    log_variance: np.ndarray = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.z)):
            raise ValueError("latent vector has non-finite entries")


class MixingModel(nn.Module):
    """Encoder / decoder / supervision / discriminator bundle for one variant."""

    def __init__(self, variant, latent_dim=None, lam=0.7, sd_dim=10, image_size=32,
                 channels=3, seed=0):
        super().__init__()
        self.variant = Variant(variant)
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        self.lam = float(lam)
        self.sd_dim = sd_dim
        self.image_size = image_size
        self.channels = channels
        self.seed = int(seed)
        self.alpha_fixed = dict(ALPHA_FIXED)
        self.delta = DELTA
        self.steps_trained = 0
        self.latent_dim = DEFAULT_LATENT[self.variant] if latent_dim is None else int(latent_dim)
        self.encoder = self.decoder = self.supervision = self.discriminator = None
        self.extractor = None
        if not self.variant.has_networks:
            return
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be positive")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            self.encoder = Encoder(self.latent_dim, image_size, channels,
                                   variational=self.variant.variational)
            self.decoder = Decoder(self.latent_dim, image_size, channels)
            if self.variant.supervised:
                self.supervision = SupervisionHead(self.latent_dim, sd_dim)
            if self.variant.generative:
                self.discriminator = Discriminator(channels)
        if self.variant.generative:
            self.extractor = PerceptualExtractor(channels, seed=self.seed + 1)

    @classmethod
    def concat_of(cls, ae):
        """A Model-3 operator reusing a trained Model-2 autoencoder."""
        if ae.variant is not Variant.AE:
            raise ValueError("concatenation wraps a plain autoencoder")
        m = cls(Variant.SD_ONLY, sd_dim=ae.sd_dim, image_size=ae.image_size, channels=ae.channels,
                seed=ae.seed)
        m.variant = Variant.CONCAT
        m.latent_dim = ae.latent_dim
        m.encoder, m.decoder = ae.encoder, ae.decoder
        m.steps_trained = ae.steps_trained
        return m

    def generator_parameters(self):
        mods = [self.encoder, self.decoder, self.supervision]
        return [p for m in mods if m is not None for p in m.parameters()]

    def discriminator_parameters(self):
        return [] if self.discriminator is None else list(self.discriminator.parameters())

    # tensor-level passes -------------------------------------------------
    def _require_nets(self):
        if not self.variant.has_networks:
            raise ValueError("SD_ONLY mixing has no networks")

    def encode_t(self, images, sample=False, generator=None):
        """Return ``(z, mean, log_variance)``; sampling only for variational heads."""
        self._require_nets()
        if images.shape[1:] != (self.channels, self.image_size, self.image_size):
            raise ValueError(f"image shape {tuple(images.shape[1:])} does not match model")
        mean, logvar = self.encoder(images)
        if logvar is not None and sample:
            eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            return mean + torch.exp(0.5 * logvar) * eps, mean, logvar
        return mean, mean, logvar

    def decode_t(self, z):
        self._require_nets()
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent dim {z.shape[-1]} != {self.latent_dim}")
        return self.decoder(z)

    def supervise_t(self, z):
        if self.supervision is None:
            raise ValueError(f"variant {self.variant.name} has no supervision head")
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent dim {z.shape[-1]} != {self.latent_dim}")
        return self.supervision(z)

    @property
    def dtype(self):
        return next(self.encoder.parameters()).dtype


# ------------------------------------------------------------------------
# numpy-facing wrappers

def to_tensor_images(images, dtype=torch.float32):
    """H x W x C (or N x H x W x C) array -> N x C x H x W tensor."""
    arr = getattr(images, "pixels", images)
    arr = np.asarray(arr)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.as_tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)), dtype=dtype)


def to_numpy_images(t):
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)


def encode(m, images, batch_size=256):
    """Inference-time encoding (mean of the variational head)."""
    m._require_nets()
    single = np.asarray(getattr(images, "pixels", images)).ndim == 3
    x = to_tensor_images(images, m.dtype)
    means, logvars = [], []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            _, mu, lv = m.encode_t(x[i:i + batch_size])
            means.append(mu.numpy().astype(float))
            if lv is not None:
                logvars.append(lv.numpy().astype(float))
    mean = np.concatenate(means)
    logvar = np.concatenate(logvars) if logvars else None
    if single:
        mean = mean[0]
        logvar = None if logvar is None else logvar[0]
    return LatentVector(z=mean, mean=mean if logvar is not None else None, log_variance=logvar)


def decode(m, z):
    z = np.asarray(getattr(z, "z", z), dtype=float)
    single = z.ndim == 1
    with torch.no_grad():
        out = to_numpy_images(m.decode_t(torch.as_tensor(np.atleast_2d(z), dtype=m.dtype)))
    out = out.astype(float)
    return out[0] if single else out


def supervise(m, z):
    z = np.asarray(getattr(z, "z", z), dtype=float)
    single = z.ndim == 1
    with torch.no_grad():
        out = m.supervise_t(torch.as_tensor(np.atleast_2d(z), dtype=m.dtype)).numpy().astype(float)
    return out[0] if single else out


# ------------------------------------------------------------------------
# composite objective

def total_loss(m, batch, generator=None, sample=True, gan=True):
    """Composite Stage-I loss for a batch.

    ``batch`` holds ``images`` (N x C x H x W tensor) and, for supervised
    variants, ``sd`` (N x D tensor). Returns ``(total, terms)`` where
    ``terms`` maps each term name to a float, including the adaptive
    weights actually used. ``gan=False`` drops the adversarial term (used
    before the discriminator warm-up step).
    """
    v = m.variant
    if not v.trainable:
        raise ValueError(f"variant {v.name} is not trained")
    images = batch["images"]
    if len(images) == 0:
        raise ValueError("empty batch")
    lam = m.lam
    z, mean, logvar = m.encode_t(images, sample=sample and v.variational, generator=generator)
    recon = m.decode_t(z)
    l_rec = loss_rec(images, recon)
    terms = {"rec": l_rec}

    if v is Variant.AE:
        return l_rec, _floats(terms)

    x_hat = m.supervise_t(z)
    sup_core = loss_sup(batch["sd"], x_hat, 1.0)
    enc_last = m.encoder.last_layer
    alpha_sup = adaptive_alpha(grad_norm(l_rec, enc_last), grad_norm(sup_core, enc_last), m.delta)
    l_sup = alpha_sup * sup_core
    terms.update(sup_core=sup_core, alpha_sup=alpha_sup, sup=l_sup)

    if v is Variant.SAE_BASIC:
        l_ae = l_rec
    else:
        a = m.alpha_fixed
        l_kl = loss_kl(mean, logvar)
        l_lp = loss_perceptual(m.extractor, images, recon)
        dec_last = m.decoder.last_layer
        if gan:
            # the hinge discriminator scores real images low, so realness = -score
            l_gan = loss_gan_g(-m.discriminator(recon))
            alpha_gan = adaptive_alpha(grad_norm(l_rec, dec_last), grad_norm(l_gan, dec_last),
                                       m.delta)
        else:
            l_gan, alpha_gan = images.new_zeros(()), 0.0
        l_ae = (a["alpha_rec"] * l_rec + a["alpha_lpips"] * l_lp + alpha_gan * l_gan
                + a["alpha_kl"] * l_kl)
        terms.update(kl=l_kl, lpips=l_lp, gan_g=l_gan, alpha_gan=alpha_gan)
    terms["ae"] = l_ae
    total = (1.0 - lam) * l_ae + lam * l_sup
    return total, _floats(terms)


def _floats(terms):
    return {k: float(v.detach()) if hasattr(v, "detach") else float(v) for k, v in terms.items()}
