"""Region and trip latents for every mixing variant."""
import numpy as np

from ..dataio import region_latent, standardize
from .model import Variant, encode


def tile_latents(m, tiles):
    return encode(m, tiles).z


def region_latents_from_tiles(tile_z, tile_region, n_regions):
    """Average tile latents per region; every region must own a tile."""
    out = np.empty((n_regions, tile_z.shape[1]))
    for r in range(n_regions):
        rows = tile_z[tile_region == r]
        if len(rows) == 0:
            raise ValueError(f"region index {r} has no tiles")
        out[r] = region_latent(list(rows))
    return out


def build_latents(m, world, sd_stats=None, as_dict=False):
    """Per-region latent matrix (rows aligned with ``world.regions``).

    Model 1 returns standardized sociodemographics, Models 2 and 4-6 the
    mean of per-tile encodings, and Model 3 the concatenation of
    standardized sociodemographics with standardized autoencoder latents.
    """
    n = len(world.regions)
    v = m.variant
    if v is Variant.SD_ONLY:
        z, _ = standardize(world.sd_matrix, sd_stats)
    else:
        z = region_latents_from_tiles(tile_latents(m, world.tiles), world.tile_region, n)
        if v is Variant.CONCAT:
            sd, _ = standardize(world.sd_matrix, sd_stats)
            z = np.hstack([sd, standardize(z)[0]])
    if as_dict:
        return {rid: z[i] for i, rid in enumerate(world.region_ids)}
    return z


def latent_blocks(m, sd_dim):
    """Column ranges of the sociodemographic / imagery blocks of a latent."""
    v = m.variant
    if v is Variant.SD_ONLY:
        return {"sociodemographic": (0, sd_dim)}
    if v is Variant.CONCAT:
        return {"sociodemographic": (0, sd_dim), "imagery": (sd_dim, sd_dim + m.latent_dim)}
    return {"imagery": (0, m.latent_dim)}


def trip_latents(latents, trips):
    """``[z_origin, z_destination]`` for each trip."""
    latents = np.asarray(latents)
    return np.hstack([latents[trips.origin], latents[trips.destination]])
