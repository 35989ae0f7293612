"""Loss terms of the supervised autoencoders.

All terms are sums over the batch (and over pixels / latent coordinates),
matching the per-example sums they are defined with.
"""
import torch

ALPHA_MAX = 1e4


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_rec(images, recon):
    """L1 distance between input and reconstructed images."""
    _check_same(images, recon)
    return (images - recon).abs().sum()


def loss_sup(x, x_hat, alpha_sup=1.0):
    """Absolute error of the sociodemographic reconstruction, times alpha_sup."""
    _check_same(x, x_hat)
    return alpha_sup * (x - x_hat).abs().sum()


def loss_kl(mean, log_variance):
    """KL divergence of N(mean, exp(log_variance)) from N(0, 1), summed."""
    _check_same(mean, log_variance)
    return 0.5 * (mean ** 2 + log_variance.exp() - 1.0 - log_variance).sum()


def unit_normalize(feat, eps=1e-10):
    norm = torch.sqrt((feat ** 2).sum(dim=1, keepdim=True))
    return feat / (norm + eps)


def loss_perceptual(extractor, images, recon):
    """Perceptual distance on channel-normalized frozen features.

    sum_n sum_l 1/(H_l W_l) sum_{h,w} || w_l * (y_l(I) - y_l(I_hat)) ||^2
    """
    _check_same(images, recon)
    total = images.new_zeros(())
    for layer, (fa, fb) in enumerate(zip(extractor(images), extractor(recon))):
        w = extractor.layer_weights(layer).to(fa.dtype).view(1, -1, 1, 1)
        diff = w * (unit_normalize(fa) - unit_normalize(fb))
        h, wd = fa.shape[-2:]
        total = total + (diff ** 2).sum() / (h * wd)
    return total


def loss_gan_g(scores_fake):
    """Generator adversarial term: minus the summed discriminator scores."""
    return -scores_fake.sum()


def loss_gan_d(scores_real, scores_fake):
    """Hinge discriminator loss: sum max(0, 1 + real) + max(0, 1 - fake)."""
    return torch.relu(1.0 + scores_real).sum() + torch.relu(1.0 - scores_fake).sum()


def adaptive_alpha(grad_norm_rec, grad_norm_other, delta=1e-6):
    """Gradient-norm ratio balancing weight, clamped to [0, 1e4]."""
    grad_norm_rec = float(grad_norm_rec)
    grad_norm_other = float(grad_norm_other)
    if grad_norm_rec < 0 or grad_norm_other < 0:
        raise ValueError("gradient norms must be non-negative")
    return min(max(grad_norm_rec / (grad_norm_other + delta), 0.0), ALPHA_MAX)


def grad_norm(loss, param):
    """L2 norm of d loss / d param; zero when param is not on the graph."""
    if not loss.requires_grad:
        return 0.0
    (g,) = torch.autograd.grad(loss, param, retain_graph=True, allow_unused=True)
    return 0.0 if g is None else float(g.norm())
