"""End-to-end orchestration: training stages, signing, verification, eval.

A :class:`TrainedSystem` bundles every checkpointed component behind the
inference operations (encode, generate, align, extract). Reports are
emitted as canonical JSON so identical config + seed reproduce identical
bytes; wall-clock timings go to a sidecar log instead.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import channel, corpus, diffusion, glyph, metrics, payload, training
from .config import RunConfig, config_from_dict
from .errors import EmptyReference, UnknownSigner
from .models import (ConditionalDenoiser, ImageEncoder, LatentCodec,
                     ProjectionHead, WatermarkEmbedder, WatermarkExtractor,
                     bits_from_logits, extraction_confidence)


@dataclass
class ExtractionResult:
    logits: np.ndarray
    bits: np.ndarray
    recovered_style: np.ndarray
    confidence: float


class TrainedSystem:
    """All trained components plus per-identity reference styles."""

    def __init__(self, cfg, codec, content_encoder, proj, style_encoder,
                 denoiser, schedule, embedder, extractor, references):
        self.cfg = cfg
        self.codec = codec
        self.content_encoder = content_encoder
        self.proj = proj
        self.style_encoder = style_encoder
        self.denoiser = denoiser
        self.schedule = schedule
        self.embedder = embedder
        self.extractor = extractor
        self.references = references   # identity -> torch vector

    # -- encoding ----------------------------------------------------------

    def _tensor(self, image):
        img = np.asarray(image, dtype=np.float32)
        if img.ndim == 3 and img.shape[2] == 4:
            img = channel.flatten_rgba(img)
        want = 1 if self.cfg.corpus.channels == 1 else self.cfg.corpus.channels
        if want == 1 and img.ndim == 3:
            img = glyph.to_grayscale(img).astype(np.float32)
        return training.to_tensor(img[None])

    def encode_content(self, image):
        with torch.no_grad():
            return self.content_encoder(self._tensor(image))[0].numpy()

    def encode_style(self, image):
        with torch.no_grad():
            return self.style_encoder(self._tensor(image))[0].numpy()

    def reference_style(self, samples):
        if len(samples) == 0:
            raise EmptyReference("need at least one reference sample")
        vecs = [self.encode_style(s) for s in samples]
        return np.mean(vecs, axis=0)

    # -- generation --------------------------------------------------------

    def _sample_latent(self, style_vec, content_vec, seed, steps=None,
                       eta=None):
        rng = torch.Generator().manual_seed(int(seed))
        latent_hw = self.cfg.corpus.image_size // self.codec.downsample
        shape = (1, self.cfg.vae.latent_channels, latent_hw, latent_hw)
        style = torch.as_tensor(style_vec, dtype=torch.float32)[None]
        content = torch.as_tensor(content_vec, dtype=torch.float32)[None]
        with torch.no_grad():
            z = diffusion.ddim_sample(
                self.denoiser, style, content, self.schedule,
                steps or self.cfg.diffusion.ddim_steps,
                eta=self.cfg.diffusion.eta if eta is None else eta,
                rng=rng, shape=shape)
            out = self.codec.decode(z)[0].numpy()
        img = out.transpose(1, 2, 0)
        return img[:, :, 0] if img.shape[2] == 1 else img

    def reconstruct(self, content_image, style_vec, seed=0, steps=None):
        return self._sample_latent(style_vec,
                                   self.encode_content(content_image), seed,
                                   steps)

    def generate_watermarked(self, content_image, reference_vec, bits,
                             seed=None):
        # default to the canonical noise the extractor was trained against;
        # per-sample noise would swamp the payload signal
        if seed is None:
            seed = self.cfg.watermark.noise_seed
        ref = torch.as_tensor(reference_vec, dtype=torch.float32)[None]
        w = torch.as_tensor(np.asarray(bits), dtype=torch.float32)[None]
        with torch.no_grad():
            fused = self.embedder(ref, w)[0].numpy()
        return self._sample_latent(fused,
                                   self.encode_content(content_image), seed)

    # -- extraction --------------------------------------------------------

    def align(self, image):
        with torch.no_grad():
            out = self.extractor.aligner(self._tensor(image))[0].numpy()
        img = out.transpose(1, 2, 0)
        return img[:, :, 0] if img.shape[2] == 1 else img

    def extract_bits(self, image, reference_vec):
        ref = torch.as_tensor(reference_vec, dtype=torch.float32)[None]
        with torch.no_grad():
            logits, recovered = self.extractor(self._tensor(image), ref)
        return ExtractionResult(
            logits=logits[0].numpy(),
            bits=bits_from_logits(logits)[0].numpy(),
            recovered_style=recovered[0].numpy(),
            confidence=extraction_confidence(logits[0]))


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_system(system, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "config": system.cfg.to_dict(),
        "config_hash": system.cfg.config_hash(),
        "codec": system.codec.state_dict(),
        "content_encoder": system.content_encoder.state_dict(),
        "proj": system.proj.state_dict() if system.proj else None,
        "style_encoder": system.style_encoder.state_dict(),
        "denoiser": system.denoiser.state_dict(),
        "embedder": system.embedder.state_dict(),
        "extractor": system.extractor.state_dict(),
        "references": {k: v.numpy() for k, v in system.references.items()},
    }, path)


def load_system(path):
    blob = torch.load(path, weights_only=False)
    cfg = config_from_dict(blob["config"])
    in_ch = 1 if cfg.corpus.channels == 1 else cfg.corpus.channels
    codec = LatentCodec(in_ch, cfg.vae.latent_channels,
                        cfg.vae.base_channels)
    content_encoder = ImageEncoder(in_ch, cfg.content.dim)
    proj = ProjectionHead(cfg.content.dim, cfg.content.proj_dim)
    style_encoder = ImageEncoder(in_ch, cfg.style.dim)
    denoiser = ConditionalDenoiser(cfg.vae.latent_channels,
                                   cfg.diffusion.base_channels,
                                   cfg.content.dim, cfg.style.dim,
                                   cfg.diffusion.content_concat)
    embedder = WatermarkEmbedder(cfg.watermark.bits, cfg.style.dim,
                                 cfg.watermark.gate_init)
    extractor = WatermarkExtractor(cfg.watermark.bits, cfg.style.dim, in_ch)
    codec.load_state_dict(blob["codec"])
    content_encoder.load_state_dict(blob["content_encoder"])
    if blob["proj"] is not None:
        proj.load_state_dict(blob["proj"])
    style_encoder.load_state_dict(blob["style_encoder"])
    denoiser.load_state_dict(blob["denoiser"])
    embedder.load_state_dict(blob["embedder"])
    extractor.load_state_dict(blob["extractor"])
    for m in (codec, content_encoder, proj, style_encoder, denoiser,
              embedder, extractor):
        m.eval()
    schedule = diffusion.make_schedule(
        cfg.diffusion.timesteps, cfg.diffusion.schedule,
        cfg.diffusion.beta_start, cfg.diffusion.beta_end)
    refs = {int(k): torch.from_numpy(v)
            for k, v in blob["references"].items()}
    return TrainedSystem(cfg, codec, content_encoder, proj, style_encoder,
                         denoiser, schedule, embedder, extractor, refs)


# ---------------------------------------------------------------------------
# full training pipeline
# ---------------------------------------------------------------------------

def train_full_pipeline(cfg, workdir, progress=print):
    """corpus -> content -> vae -> diffusion -> watermark; returns the system.

    Writes stage logs and the final checkpoint under ``workdir``.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    def stage(name):
        progress(f"[{time.time() - t0:7.1f}s] {name}")

    stage("building corpus")
    manifest = corpus.build_corpus(cfg, workdir / "corpus")
    train_x, train_y = corpus.load_split(manifest, workdir / "corpus",
                                         "train")
    stage(f"training content encoder on {len(train_x)} images")
    content_encoder, proj, clog = training.train_content(
        train_x, train_y, cfg, seed=cfg.seed)
    _write_log(clog, workdir / "logs" / "content.jsonl")
    stage("fine-tuning latent codec")
    codec, vlog = training.vae_finetune(train_x, cfg, seed=cfg.seed)
    _write_log(vlog, workdir / "logs" / "vae.jsonl")
    stage("training conditional denoiser")
    denoiser, style_encoder, schedule, dlog = training.train_diffusion(
        train_x, train_y, codec, content_encoder, cfg, seed=cfg.seed)
    _write_log(dlog, workdir / "logs" / "diffusion.jsonl")
    stage("training watermark embedder/extractor")
    frozen = {"codec": codec, "content_encoder": content_encoder,
              "style_encoder": style_encoder, "denoiser": denoiser,
              "schedule": schedule}
    embedder, extractor, wlog = training.watermark_train(
        train_x, train_y, frozen, cfg, seed=cfg.seed)
    _write_log(wlog, workdir / "logs" / "watermark.jsonl")

    refs = training.reference_styles(
        *_all_samples(manifest, workdir), style_encoder,
        cfg.watermark.reference_k)
    system = TrainedSystem(cfg, codec, content_encoder, proj, style_encoder,
                           denoiser, schedule, embedder, extractor, refs)
    save_system(system, workdir / "system.pt")
    stage("done")
    return system, manifest


def _all_samples(manifest, workdir):
    root = Path(workdir) / "corpus"
    xs, ys = [], []
    for split in ("train", "eval"):
        x, y = corpus.load_split(manifest, root, split)
        if len(x):
            xs.append(x)
            ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def _write_log(entries, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# signing and verification
# ---------------------------------------------------------------------------

def sign(system, signer_id, document_bytes, ttl, store, now=None,
         signer_samples=None, seed=None):
    """Issue a one-time payload and generate the watermarked signature."""
    now = time.time() if now is None else now
    identity = int(signer_id)
    if identity not in system.references:
        raise UnknownSigner(f"no reference style for signer {signer_id!r}")
    record, entry = payload.issue(str(signer_id), document_bytes, ttl, store,
                                  system.cfg.payload, now)
    bits = payload.encode_metadata(record, system.cfg.payload)
    reference = system.references[identity].numpy()
    if signer_samples is None or len(signer_samples) == 0:
        raise UnknownSigner("signer has no registered sample images")
    content_source = signer_samples[0]
    image = system.generate_watermarked(content_source, reference, bits,
                                        seed=seed)
    return image, record, entry


def verify(system, image, claimed_signer, document_bytes, store, now=None):
    """align -> extract -> decode -> registry state machine."""
    now = time.time() if now is None else now
    identity = int(claimed_signer)
    if identity not in system.references:
        raise UnknownSigner(f"no reference style for {claimed_signer!r}")
    reference = system.references[identity].numpy()
    result = system.extract_bits(image, reference)
    return payload.verify_bits(result.bits, str(claimed_signer),
                               document_bytes, now, store,
                               system.cfg.payload,
                               confidence=result.confidence)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _eval_batch(system, images, labels, rng):
    """Generate watermarked images with random payload bits per sample."""
    out = []
    for i, (img, cid) in enumerate(zip(images, labels)):
        bits = rng.integers(0, 2, size=system.cfg.watermark.bits)
        ref = system.references[int(cid)].numpy()
        gen = system.generate_watermarked(img, ref, bits)
        out.append((img, gen, bits, ref))
    return out

def _accuracy(system, batch, distort=None, rng=None):
    accs = []
    for _, gen, bits, ref in batch:
        img = gen if distort is None else channel.apply(gen, distort, rng)
        res = system.extract_bits(img, ref)
        accs.append(metrics.bit_accuracy(bits, res.bits))
    return float(np.mean(accs))


def evaluate(system, eval_images, eval_labels, seed=0, n_images=None,
             sweeps=True, only_kind=None):
    """EvalReport dict: clean and per-distortion accuracy, fidelity stats."""
    cfg = system.cfg
    rng = np.random.default_rng(seed)
    n = min(n_images or len(eval_images), len(eval_images))
    order = rng.permutation(len(eval_images))[:n]
    images = [eval_images[i] for i in order]
    labels = [eval_labels[i] for i in order]
    batch = _eval_batch(system, images, labels, rng)

    report = {"config_hash": cfg.config_hash(), "n": n,
              "clean_accuracy": _accuracy(system, batch)}
    psnrs = [metrics.psnr(src, gen) for src, gen, _, _ in batch]
    ssims = [metrics.ssim(src, gen) for src, gen, _, _ in batch]
    report["psnr_vs_source"] = float(np.mean(psnrs))
    report["ssim_vs_source"] = float(np.mean(ssims))
    real_emb = [system.encode_style(img) for img in images]
    gen_emb = [system.encode_style(gen) for _, gen, _, _ in batch]
    report["style_distance_proxy"] = metrics.style_distance_proxy(real_emb,
                                                                 gen_emb)
    if sweeps:
        rows = []
        for kind, pname, level, spec in channel.sweep_specs(cfg.channel):
            if only_kind is not None and kind != only_kind:
                continue
            drng = np.random.default_rng(
                np.random.SeedSequence([seed, zlib.crc32(kind.encode())]))
            acc = _accuracy(system, batch, spec, drng)
            rows.append({"kind": kind, "param": pname,
                         "level": float(level), "accuracy": acc, "n": n})
        report["sweeps"] = rows
    return report


def ablation_report(system, eval_images, eval_labels, seed=0, n_images=24):
    """Paired style distance for full / style-only / content-only variants.

    The ablated branch receives a *mismatched* conditioning vector (another
    identity's reference style, another image's content) rather than a zero
    vector: zeros sit far off the conditioning manifold and pull every
    generation toward the dataset mean, which distance-to-mean style metrics
    reward. All variants generate from the canonical noise so conditioning
    is the only varying input.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(eval_images))[:n_images]
    images = [eval_images[i] for i in order]
    labels = [eval_labels[i] for i in order]
    real_emb = [system.encode_style(img) for img in images]
    ids = sorted({int(c) for c in labels})
    out = {}
    for variant in ("full", "style_only", "content_only"):
        gen_emb = []
        for k, (img, cid) in enumerate(zip(images, labels)):
            cid = int(cid)
            style = system.references[cid].numpy()
            content = system.encode_content(img)
            if variant == "style_only":      # content branch ablated
                content = system.encode_content(images[(k + 1) % len(images)])
            if variant == "content_only":    # style branch ablated
                other = ids[(ids.index(cid) + 1) % len(ids)]
                style = system.references[other].numpy()
            gen = system._sample_latent(
                style, content, seed=system.cfg.watermark.noise_seed)
            gen_emb.append(system.encode_style(gen))
        out[variant] = metrics.style_distance_paired(real_emb, gen_emb)
    return out


def write_report(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
