"""Procedural multi-writer pseudo-signature corpus.

Stands in for license-restricted signature datasets: each identity is a set
of random stroke splines with a writer-specific slant/thickness, rendered
with per-sample jitter to model intra-writer variability.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.interpolate import splev, splprep

from . import glyph
from .errors import RenderDegenerate

FOREGROUND_BAND = (0.03, 0.30)


@dataclass
class IdentitySpec:
    identity_id: int
    stroke_splines: list      # list of (k, 2) control polygons in [0,1]^2
    base_slant: float         # degrees
    base_thickness: float     # pixels at 64px canvas
    ligature_probability: float


def generate_identity(identity_id, rng, canvas=(64, 64)):
    """Random signature-like identity; deterministic under the given rng."""
    n_strokes = int(rng.integers(2, 5))
    strokes = []
    x_cursor = 0.08
    span = (0.86 - x_cursor) / n_strokes
    for _ in range(n_strokes):
        n_ctrl = int(rng.integers(4, 8))
        xs = np.sort(rng.uniform(x_cursor, x_cursor + span * 1.25, n_ctrl))
        ys = 0.5 + rng.uniform(-0.28, 0.28, n_ctrl)
        # occasional loop-back to mimic letterforms
        if rng.random() < 0.5:
            j = int(rng.integers(1, n_ctrl))
            xs[j:] = xs[j:] - rng.uniform(0.0, 0.35 * span)
        pts = np.clip(np.stack([xs, ys], axis=1), 0.02, 0.98)
        strokes.append(pts)
        x_cursor += span
    return IdentitySpec(
        identity_id=int(identity_id),
        stroke_splines=strokes,
        base_slant=float(rng.uniform(-18.0, 18.0)),
        base_thickness=float(rng.uniform(2.4, 3.6)),
        ligature_probability=float(rng.uniform(0.0, 0.9)),
    )


def _stroke_path(ctrl, n_samples):
    ctrl = np.asarray(ctrl)
    if len(ctrl) < 4:
        t = np.linspace(0, 1, n_samples)
        seg = np.linspace(0, 1, len(ctrl))
        return np.stack([np.interp(t, seg, ctrl[:, 0]),
                         np.interp(t, seg, ctrl[:, 1])], axis=1)
    tck, _ = splprep([ctrl[:, 0], ctrl[:, 1]], s=0,
                     k=min(3, len(ctrl) - 1))
    xs, ys = splev(np.linspace(0, 1, n_samples), tck)
    return np.stack([xs, ys], axis=1)


def _stamp_paths(paths, size, thickness):
    """Anti-aliased ink accumulation: soft disk stamped along each path."""
    h = w = size
    ink = np.zeros((h, w))
    radius = max(1, int(np.ceil(thickness)) + 1)
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    for path in paths:
        pts = path * (size - 1)
        # densify so consecutive stamps overlap
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        n_dense = max(2, int(seg.sum() * 2.0))
        t = np.linspace(0, 1, n_dense)
        u = np.concatenate([[0], np.cumsum(seg)])
        u = u / max(u[-1], 1e-9)
        dense = np.stack([np.interp(t, u, pts[:, 0]),
                          np.interp(t, u, pts[:, 1])], axis=1)
        for cx, cy in dense:
            ix, iy = int(round(cx)), int(round(cy))
            if not (0 <= ix < w and 0 <= iy < h):
                continue
            d2 = (xx + ix - cx) ** 2 + (yy + iy - cy) ** 2
            stamp = np.clip(1.5 * (thickness / 2 + 0.5 - np.sqrt(d2)), 0, 1)
            y0, y1 = max(0, iy - radius), min(h, iy + radius + 1)
            x0, x1 = max(0, ix - radius), min(w, ix + radius + 1)
            sy0, sx0 = y0 - (iy - radius), x0 - (ix - radius)
            patch = stamp[sy0:sy0 + (y1 - y0), sx0:sx0 + (x1 - x0)]
            ink[y0:y1, x0:x1] = np.maximum(ink[y0:y1, x0:x1], patch)
    return ink


def render_sample(spec, jitter, rng, size=64, channels=1):
    """Rasterize one jittered instance of an identity (white background)."""
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    for attempt in range(4):
        scale = 1.0 / (1.0 + 0.3 * attempt)   # shrink thickness on retry
        paths = []
        prev_end = None
        slant = spec.base_slant + float(rng.normal(0, 3.0)) * min(jitter, 1.0)
        for ctrl in spec.stroke_splines:
            ctrl = np.asarray(ctrl).copy()
            ctrl += rng.normal(0, 0.012 * jitter, ctrl.shape)
            path = _stroke_path(ctrl, 40)
            # shear about the canvas centre models the writer's slant
            shear = np.tan(np.deg2rad(slant))
            path[:, 0] = path[:, 0] + shear * (path[:, 1] - 0.5)
            path = np.clip(path, 0.01, 0.99)
            if prev_end is not None and rng.random() < spec.ligature_probability:
                paths.append(np.stack([prev_end, path[0]]))
            paths.append(path)
            prev_end = path[-1]
        thickness = spec.base_thickness * scale * (size / 64.0)
        thickness *= 1.0 + float(rng.normal(0, 0.06)) * min(jitter, 1.0)
        ink = _stamp_paths(paths, size, max(0.8, thickness))
        image = np.clip(1.0 - ink, 0.0, 1.0)
        ratio = float((image < 0.5).mean())
        if FOREGROUND_BAND[0] <= ratio <= FOREGROUND_BAND[1]:
            if channels > 1:
                image = np.repeat(image[:, :, None], channels, axis=2)
            return image
    raise RenderDegenerate(
        f"identity {spec.identity_id}: foreground ratio {ratio:.3f} "
        f"outside {FOREGROUND_BAND} after retries")


# ---------------------------------------------------------------------------
# corpus build / manifest
# ---------------------------------------------------------------------------

def save_image(image, path):
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr.squeeze()).save(path)


def load_image(path):
    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return arr


def build_corpus(cfg, out_dir):
    """Render the corpus under ``out_dir`` and return the manifest dict.

    Pure function of (cfg.corpus, cfg.augment): per-sample seeds are spawned
    from the corpus seed, so rebuilds are byte-identical.
    """
    ccfg = cfg.corpus
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    id_rng = np.random.default_rng(
        np.random.SeedSequence([ccfg.corpus_seed, 0xC0]))
    specs = [generate_identity(i, id_rng, canvas=(ccfg.image_size,) * 2)
             for i in range(ccfg.n_identities)]

    n_train = int(round(ccfg.n_identities * ccfg.train_fraction))
    perm = np.random.default_rng(
        np.random.SeedSequence([ccfg.corpus_seed, 0x5E])).permutation(
            ccfg.n_identities)
    train_ids = set(int(i) for i in perm[:n_train])

    aug_params = glyph.AugmentParams(
        epsilon=cfg.augment.epsilon, n_control=cfg.augment.n_control,
        sigma=cfg.augment.sigma, sigma_scale=cfg.augment.sigma_scale,
        k_trunc=cfg.augment.k_trunc, open_radius=cfg.augment.open_radius,
        bending_reg=cfg.augment.bending_reg)

    entries = []
    for spec in specs:
        split = "train" if spec.identity_id in train_ids else "eval"
        for s in range(ccfg.samples_per_identity):
            seed = [ccfg.corpus_seed, 1, spec.identity_id, s]
            rng = np.random.default_rng(np.random.SeedSequence(seed))
            image = render_sample(spec, ccfg.jitter, rng,
                                  size=ccfg.image_size,
                                  channels=ccfg.channels)
            name = f"id{spec.identity_id:03d}_s{s:03d}.png"
            save_image(image, img_dir / name)
            entries.append({"path": f"images/{name}",
                            "identity_id": spec.identity_id,
                            "split": split, "seed": seed,
                            "provenance": "rendered"})
            if split == "train":
                for a in range(ccfg.augment_factor - 1):
                    aseed = [ccfg.corpus_seed, 2, spec.identity_id, s, a]
                    arng = np.random.default_rng(np.random.SeedSequence(aseed))
                    aug = glyph.augment(image, aug_params, arng)
                    aname = f"id{spec.identity_id:03d}_s{s:03d}_a{a:02d}.png"
                    save_image(aug, img_dir / aname)
                    entries.append({"path": f"images/{aname}",
                                    "identity_id": spec.identity_id,
                                    "split": split, "seed": aseed,
                                    "provenance": "augmented"})

    manifest = {"corpus_seed": ccfg.corpus_seed,
                "image_size": [ccfg.image_size, ccfg.image_size],
                "channels": ccfg.channels,
                "entries": entries}
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        header = {k: manifest[k] for k in
                  ("corpus_seed", "image_size", "channels")}
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for entry in manifest["entries"]:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def read_manifest(path):
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    manifest = dict(lines[0]["header"])
    manifest["entries"] = lines[1:]
    return manifest


def manifest_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_split(manifest, corpus_dir, split):
    """Return (images array, identity labels) for one split."""
    root = Path(corpus_dir)
    images, labels = [], []
    for entry in manifest["entries"]:
        if entry["split"] != split:
            continue
        images.append(load_image(root / entry["path"]))
        labels.append(entry["identity_id"])
    return np.asarray(images), np.asarray(labels)
