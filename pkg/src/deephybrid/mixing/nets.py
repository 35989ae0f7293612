"""Desk-scale convolutional encoder, decoder, heads and frozen feature net."""
import torch
from torch import nn


def _norm(c):
    # per-sample normalization keeps batched and single encodes identical
    return nn.GroupNorm(8 if c % 8 == 0 else 1, c)


def _conv_stack(channels, act, norm=False):
    layers = []
    for cin, cout in zip(channels[:-1], channels[1:]):
        layers.append(nn.Conv2d(cin, cout, 4, stride=2, padding=1))
        if norm:
            layers.append(_norm(cout))
        layers.append(act())
    return nn.Sequential(*layers)


class Encoder(nn.Module):
    """Four stride-2 conv levels followed by an affine map to the latent.

    With ``variational=True`` the final layer emits ``[mean, log_variance]``.
    """

    def __init__(self, latent_dim, image_size=32, in_channels=3, width=(16, 32, 64, 64),
                 variational=False):
        super().__init__()
        self.variational = variational
        self.latent_dim = latent_dim
        self.features = _conv_stack((in_channels,) + tuple(width), nn.SiLU, norm=True)
        side = image_size // 2 ** len(width)
        self.flat = width[-1] * side * side
        self.head = nn.Linear(self.flat, latent_dim * (2 if variational else 1))

    @property
    def last_layer(self):
        return self.head.weight

    def forward(self, x):
        h = self.head(self.features(x).flatten(1))
        if self.variational:
            mean, logvar = h.chunk(2, dim=1)
            return mean, logvar.clamp(-30.0, 20.0)
        return h, None


class Decoder(nn.Module):
    def __init__(self, latent_dim, image_size=32, out_channels=3, width=(64, 64, 32, 16)):
        super().__init__()
        self.side = image_size // 2 ** len(width)
        self.width = width
        self.inp = nn.Linear(latent_dim, width[0] * self.side * self.side)
        layers = []
        chans = tuple(width) + (width[-1],)
        for cin, cout in zip(chans[:-2], chans[1:-1]):
            layers += [nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1), _norm(cout), nn.SiLU()]
        self.body = nn.Sequential(*layers)
        self.out = nn.ConvTranspose2d(width[-1], out_channels, 4, stride=2, padding=1)

    @property
    def last_layer(self):
        return self.out.weight

    def forward(self, z):
        h = self.inp(z).view(-1, self.width[0], self.side, self.side)
        return torch.sigmoid(self.out(self.body(nn.functional.silu(h))))


class SupervisionHead(nn.Module):
    """Two-layer perceptron from latent to sociodemographics."""

    def __init__(self, latent_dim, out_dim, hidden=64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(latent_dim, hidden), nn.SiLU(), nn.Linear(hidden, out_dim))

    def forward(self, z):
        return self.net(z)


class Discriminator(nn.Module):
    """Three-layer patch discriminator; returns one score per image."""

    def __init__(self, in_channels=3, width=32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, width, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x).mean(dim=(1, 2, 3))


class PerceptualExtractor(nn.Module):
    """Frozen random conv features standing in for a pretrained backbone.

    ``forward`` returns the raw activation of every layer; channel weights
    ``w_l`` are fixed at one.
    """

    def __init__(self, in_channels=3, channels=(16, 32, 64), seed=0):
        super().__init__()
        g = torch.Generator().manual_seed(int(seed))
        convs = []
        cin = in_channels
        for i, cout in enumerate(channels):
            conv = nn.Conv2d(cin, cout, 3, stride=1 if i == 0 else 2, padding=1)
            fan_in = cin * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) / fan_in ** 0.5)
                conv.bias.copy_(0.1 * torch.randn(conv.bias.shape, generator=g))
            conv.weight.requires_grad_(False)
            conv.bias.requires_grad_(False)
            convs.append(conv)
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.register_buffer("weights", torch.ones(len(channels), max(channels)))
        self.channels = tuple(channels)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = torch.tanh(conv(x))
            feats.append(x)
        return feats

    def layer_weights(self, layer):
        return self.weights[layer, : self.channels[layer]]
