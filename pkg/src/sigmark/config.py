"""Run configuration: nested dataclasses, strict YAML loading, config hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class CorpusConfig:
    n_identities: int = 20
    samples_per_identity: int = 32
    image_size: int = 64
    channels: int = 1
    train_fraction: float = 0.8
    corpus_seed: int = 0
    augment_factor: int = 1
    jitter: float = 1.0


@dataclass
class AugmentConfig:
    epsilon: float = 2.0
    n_control: int = 16
    sigma: float = 1.0
    sigma_scale: float = 2.0   # 4.0 at 224px; scaled to the 64px default canvas
    k_trunc: float = 5.0
    open_radius: int = 1
    bending_reg: float = 0.0


@dataclass
class ContentConfig:
    dim: int = 128
    proj_dim: int = 64
    tau: float = 0.1
    epochs: int = 12
    batch: int = 32
    lr: float = 1e-3


@dataclass
class StyleConfig:
    dim: int = 128


@dataclass
class VaeConfig:
    latent_channels: int = 4
    base_channels: int = 32
    kl_weight: float = 1e-6
    epochs: int = 12
    batch: int = 32
    lr: float = 1e-3


@dataclass
class DiffusionConfig:
    timesteps: int = 1000
    schedule: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ddim_steps: int = 8
    eta: float = 0.0
    base_channels: int = 48
    steps: int = 3000
    batch: int = 32
    lr: float = 5e-5
    content_concat: bool = False   # figure-caption variant; default is t-emb fusion


@dataclass
class WatermarkConfig:
    bits: int = 16
    lambda_secret: float = 4.0
    lambda_recover: float = 1.0
    lambda_style: float = 1.0
    lambda_content: float = 1.0
    margin: float = 0.5
    lambda_t: float = 0.1
    gate_init: float = 2.0
    reference_k: int = 5
    # phase-1 warm start: the extractor first trains against a pregenerated
    # pool of watermarked images (cheap, heavily reused) before the joint
    # phase backpropagates through the frozen generator
    warmup_pool: int = 2048
    warmup_steps: int = 3000
    warmup_batch: int = 64
    # phase-1b: after the clean warm start, keep training the extractor on
    # the pool under random distortions at a reduced rate; applying
    # distortions from step 0 instead makes the extractor collapse to a
    # constant image-independent prediction
    finetune_steps: int = 2000
    finetune_lr: float = 3e-4
    # watermarked generation always starts DDIM from this canonical noise:
    # with per-sample noise the payload is unrecoverable (the noise-induced
    # image variation swamps the bit-induced variation)
    noise_seed: int = 0
    steps: int = 1200
    batch: int = 16
    lr: float = 1e-3
    train_distortions: tuple = ("identity", "gaussian_blur", "gaussian_noise",
                                "brightness", "contrast", "jpeg_soft",
                                "affine", "print_scan_soft")


@dataclass
class PrintScanProfile:
    warp_mag: float = 0.01     # fraction of width
    blur_sigma: float = 0.8
    noise_sigma: float = 0.02
    gamma_low: float = 0.8
    gamma_high: float = 1.2
    dot_gain: float = 1.0


@dataclass
class ChannelConfig:
    jpeg_qualities: tuple = (90, 70, 50, 30)
    blur_sigmas: tuple = (0.5, 1.0, 2.0, 3.0)
    noise_sigmas: tuple = (0.02, 0.05, 0.08, 0.1)
    factor_grid: tuple = (0.5, 0.8, 1.2, 2.0)
    hue_shifts: tuple = (-0.1, -0.05, 0.05, 0.1)
    salt_pepper: tuple = (0.01, 0.02, 0.05)
    print_scan: PrintScanProfile = field(default_factory=PrintScanProfile)


@dataclass
class PayloadConfig:
    """Bit layout of the in-image payload; widths must sum to watermark.bits.

    Default is the 16-bit toy layout; :func:`full_scale_config` selects the
    48-bit layout (20/12/8/8).
    """

    version: int = 1
    record_bits: int = 6
    digest_bits: int = 4
    expiry_bits: int = 2
    crc_bits: int = 4

    @property
    def total_bits(self):
        return (self.record_bits + self.digest_bits
                + self.expiry_bits + self.crc_bits)


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    content: ContentConfig = field(default_factory=ContentConfig)
    style: StyleConfig = field(default_factory=StyleConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    watermark: WatermarkConfig = field(default_factory=WatermarkConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    payload: PayloadConfig = field(default_factory=PayloadConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        here = f"{path}.{name}" if path else name
        nested = _NESTED.get((cls, name))
        if nested is not None:
            kwargs[name] = _build(nested, value, here)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "corpus"): CorpusConfig,
    (RunConfig, "augment"): AugmentConfig,
    (RunConfig, "content"): ContentConfig,
    (RunConfig, "style"): StyleConfig,
    (RunConfig, "vae"): VaeConfig,
    (RunConfig, "diffusion"): DiffusionConfig,
    (RunConfig, "watermark"): WatermarkConfig,
    (RunConfig, "channel"): ChannelConfig,
    (RunConfig, "payload"): PayloadConfig,
    (ChannelConfig, "print_scan"): PrintScanProfile,
}


def config_from_dict(data):
    cfg = _build(RunConfig, data or {})
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.payload.record_bits + cfg.payload.digest_bits \
            + cfg.payload.expiry_bits + cfg.payload.crc_bits != cfg.watermark.bits:
        raise ConfigError(
            "payload field widths must sum to watermark.bits "
            f"({cfg.payload.record_bits}+{cfg.payload.digest_bits}"
            f"+{cfg.payload.expiry_bits}+{cfg.payload.crc_bits}"
            f" != {cfg.watermark.bits})")
    if not 0 < cfg.corpus.train_fraction < 1:
        raise ConfigError("corpus.train_fraction must be in (0,1)")
    if cfg.diffusion.schedule not in ("linear", "cosine"):
        raise ConfigError(f"diffusion.schedule: unknown kind "
                          f"{cfg.diffusion.schedule!r}")


def load_config(path):
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data)


def save_config(cfg, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


def full_scale_config():
    """48-bit payload mode: layout 20/12/8/8, paper-scale image size."""
    cfg = RunConfig()
    cfg.watermark = dataclasses.replace(cfg.watermark, bits=48)
    cfg.payload = PayloadConfig(record_bits=20, digest_bits=12,
                                expiry_bits=8, crc_bits=8)
    cfg.corpus = dataclasses.replace(cfg.corpus, image_size=224, channels=3)
    cfg.augment = dataclasses.replace(cfg.augment, sigma_scale=4.0)
    return cfg
