"""Checkpoints: little-endian float32 parameter blocks plus a JSON manifest."""
import json
from pathlib import Path

import numpy as np
import torch

from .model import MixingModel, Variant

FORMAT = "deephybrid-checkpoint-1"


def _paths(path):
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".bin", ".json") else p
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_checkpoint(m, path):
    """Write ``<path>.bin`` and ``<path>.json``; returns both paths."""
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    blocks, offset = [], 0
    with open(bin_path, "wb") as fh:
        for name, t in m.state_dict().items():
            a = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
            fh.write(a.tobytes())
            blocks.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.nbytes
    manifest = {
        "format": FORMAT,
        "variant": int(m.variant),
        "variant_name": m.variant.name,
        "latent_dim": m.latent_dim,
        "sd_dim": m.sd_dim,
        "image_size": m.image_size,
        "channels": m.channels,
        "lambda": m.lam,
        "seed": m.seed,
        "steps": m.steps_trained,
        "blocks": blocks,
    }
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return bin_path, json_path


def load_checkpoint(path):
    bin_path, json_path = _paths(path)
    manifest = json.loads(json_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{json_path}: not a mixing checkpoint")
    variant = Variant(manifest["variant"])
    build = Variant.AE if variant is Variant.CONCAT else variant
    m = MixingModel(build, latent_dim=manifest["latent_dim"] or None, lam=manifest["lambda"],
                    sd_dim=manifest["sd_dim"], image_size=manifest["image_size"],
                    channels=manifest["channels"], seed=manifest["seed"])
    if variant is Variant.CONCAT:
        m = MixingModel.concat_of(m)
    raw = bin_path.read_bytes()
    state = {}
    for b in manifest["blocks"]:
        count = int(np.prod(b["shape"])) if b["shape"] else 1
        a = np.frombuffer(raw, dtype="<f4", count=count, offset=b["offset"]).reshape(b["shape"])
        state[b["name"]] = torch.from_numpy(a.copy())
    m.load_state_dict(state)
    m.steps_trained = manifest["steps"]
    m.eval()
    return m
