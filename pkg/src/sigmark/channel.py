"""Distortion battery: digital distortions, office operations, print-scan.

Two families:
  * :func:`apply` — numpy implementations for evaluation (includes the
    non-differentiable distortions: true JPEG, salt-pepper, crop,
    transparency, print-scan).
  * :func:`torch_distort` — differentiable torch versions used as the noise
    layer inside watermark training, so gradients can flow through.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

from . import glyph
from .errors import EmptyGlyph

DIFFERENTIABLE_KINDS = ("identity", "gaussian_blur", "gaussian_noise",
                        "brightness", "contrast", "jpeg_soft", "affine",
                        "print_scan_soft")
EVAL_KINDS = DIFFERENTIABLE_KINDS[:-1] + (
    "jpeg", "saturation", "hue", "salt_pepper", "roi_crop",
    "bg_transparency", "print_scan")


@dataclass
class DistortionSpec:
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def differentiable(self):
        return self.kind in DIFFERENTIABLE_KINDS


# ---------------------------------------------------------------------------
# numpy (evaluation) implementations
# ---------------------------------------------------------------------------

def _to_rgb(image):
    if image.ndim == 2:
        return np.repeat(image[:, :, None], 3, axis=2), True
    return image, False


def _jpeg(image, quality):
    arr = np.clip(image * 255 + 0.5, 0, 255).astype(np.uint8)
    pil = Image.fromarray(arr.squeeze())
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    out = np.asarray(Image.open(buf), dtype=np.float64) / 255.0
    return out.reshape(image.shape)


def _hsv_adjust(image, sat_factor=1.0, hue_shift=0.0):
    rgb, was_gray = _to_rgb(image)
    import colorsys
    flat = rgb.reshape(-1, 3)
    out = np.empty_like(flat)
    for i, (r, g, b) in enumerate(flat):
        h, s, v = colorsys.rgb_to_hsv(r, g, b)
        h = (h + hue_shift) % 1.0
        s = min(1.0, s * sat_factor)
        out[i] = colorsys.hsv_to_rgb(h, s, v)
    out = out.reshape(rgb.shape)
    if was_gray:
        out = glyph.to_grayscale(out)
    return out


def roi_crop(image, margin=2, rng=None):
    """Crop to the stroke bounding box plus margin, re-pad to original size."""
    mask = glyph.preprocess(image, open_radius=0)
    ys, xs = np.nonzero(mask)
    h, w = mask.shape
    y0 = max(0, ys.min() - margin)
    y1 = min(h, ys.max() + 1 + margin)
    x0 = max(0, xs.min() - margin)
    x1 = min(w, xs.max() + 1 + margin)
    crop = image[y0:y1, x0:x1]
    out = np.ones_like(image)
    oy = (h - crop.shape[0]) // 2
    ox = (w - crop.shape[1]) // 2
    out[oy:oy + crop.shape[0], ox:ox + crop.shape[1]] = crop
    return out


def bg_transparency(image, background=None):
    """Alpha-matte the strokes and composite onto a document background.

    Returns an H x W x 4 RGBA array; ``background`` is an H x W (x3) page
    image (defaults to plain white).
    """
    mask = glyph.preprocess(image, open_radius=0)
    if not mask.any():
        raise EmptyGlyph("no strokes to matte")
    rgb, _ = _to_rgb(np.asarray(image, dtype=np.float64))
    h, w = mask.shape
    if background is None:
        background = np.ones((h, w, 3))
    bg, _ = _to_rgb(np.asarray(background, dtype=np.float64))
    alpha = mask.astype(np.float64)
    comp = alpha[:, :, None] * rgb + (1 - alpha[:, :, None]) * bg
    return np.concatenate([comp, alpha[:, :, None]], axis=2)


def flatten_rgba(image):
    """Drop the alpha plane of a bg_transparency composite (already matted)."""
    return image[..., :3] if image.ndim == 3 and image.shape[2] == 4 else image


def print_scan(image, profile, rng):
    """Software print-scan channel.

    warp -> dot gain -> blur -> sensor noise -> gamma + illumination
    gradient. A model of consumer laser printing plus re-capture, not a
    device calibration.
    """
    img = glyph.to_grayscale(np.asarray(image, dtype=np.float64))
    h, w = img.shape
    if profile.warp_mag > 0:
        mag = profile.warp_mag * w
        src = np.float64([[0, 0], [w, 0], [0, h], [w, h]])
        dst = src + rng.uniform(-mag, mag, src.shape)
        coeffs = _homography(dst, src)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        denom = coeffs[6] * xs + coeffs[7] * ys + 1.0
        mx = (coeffs[0] * xs + coeffs[1] * ys + coeffs[2]) / denom
        my = (coeffs[3] * xs + coeffs[4] * ys + coeffs[5]) / denom
        img = ndimage.map_coordinates(img, [my, mx], order=1, cval=1.0)
    if profile.dot_gain > 0:
        ink = 1.0 - img
        thick = ndimage.grey_dilation(ink, size=(3, 3))
        t = min(1.0, profile.dot_gain)
        img = 1.0 - ((1 - t) * ink + t * thick)
    if profile.blur_sigma > 0:
        img = ndimage.gaussian_filter(img, profile.blur_sigma)
    if profile.noise_sigma > 0:
        img = img + rng.normal(0, profile.noise_sigma, img.shape)
    gamma = rng.uniform(profile.gamma_low, profile.gamma_high) \
        if profile.gamma_high > profile.gamma_low else profile.gamma_low
    img = np.clip(img, 0, 1) ** gamma if gamma != 1.0 else np.clip(img, 0, 1)
    if profile.warp_mag > 0 or profile.noise_sigma > 0:
        # uneven illumination across the page
        grad = rng.uniform(-0.05, 0.05)
        img = img * (1.0 + grad * (np.linspace(-1, 1, w)[None, :]))
    out = np.clip(img, 0, 1)
    if np.asarray(image).ndim == 3:
        out = np.repeat(out[:, :, None], np.asarray(image).shape[2], axis=2)
    return out


def _homography(src, dst):
    A, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    return np.linalg.solve(np.asarray(A), np.asarray(b))


def apply(image, spec, rng=None):
    """Apply one distortion; deterministic given (spec, rng state)."""
    image = np.asarray(image, dtype=np.float64)
    kind, p = spec.kind, spec.params
    if kind == "identity":
        return image.copy()
    if kind == "jpeg":
        return _jpeg(image, p.get("quality", 80))
    if kind == "gaussian_blur":
        sigma = p.get("sigma", 1.0)
        if image.ndim == 3:
            return np.clip(np.stack(
                [ndimage.gaussian_filter(image[..., c], sigma)
                 for c in range(image.shape[2])], axis=2), 0, 1)
        return np.clip(ndimage.gaussian_filter(image, sigma), 0, 1)
    if kind == "gaussian_noise":
        sigma = p.get("sigma", 0.05)
        if sigma == 0:
            return image.copy()
        return np.clip(image + rng.normal(0, sigma, image.shape), 0, 1)
    if kind == "brightness":
        return np.clip(image * p.get("factor", 1.0), 0, 1)
    if kind == "contrast":
        f = p.get("factor", 1.0)
        return np.clip((image - 0.5) * f + 0.5, 0, 1)
    if kind == "saturation":
        return _hsv_adjust(image, sat_factor=p.get("factor", 1.0))
    if kind == "hue":
        return _hsv_adjust(image, hue_shift=p.get("shift", 0.0))
    if kind == "salt_pepper":
        prob = p.get("p", 0.02)
        if prob == 0:
            return image.copy()
        out = image.copy()
        u = rng.random(image.shape[:2])
        out[u < prob / 2] = 0.0
        out[(u >= prob / 2) & (u < prob)] = 1.0
        return out
    if kind == "roi_crop":
        return roi_crop(image, margin=p.get("margin", 2), rng=rng)
    if kind == "bg_transparency":
        return flatten_rgba(bg_transparency(image,
                                            p.get("background")))
    if kind == "print_scan":
        return print_scan(image, p["profile"], rng)
    raise ValueError(f"unknown distortion kind {kind!r}")


# ---------------------------------------------------------------------------
# differentiable (training) implementations, torch B x C x H x W in [0,1]
# ---------------------------------------------------------------------------

def _gauss_kernel1d(sigma, device):
    radius = max(1, int(3 * sigma + 0.5))
    x = torch.arange(-radius, radius + 1, dtype=torch.float32, device=device)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def torch_blur(x, sigma):
    k = _gauss_kernel1d(sigma, x.device)
    c = x.shape[1]
    kx = k.view(1, 1, 1, -1).repeat(c, 1, 1, 1)
    ky = k.view(1, 1, -1, 1).repeat(c, 1, 1, 1)
    pad = k.numel() // 2
    x = F.conv2d(F.pad(x, (pad, pad, 0, 0), mode="replicate"), kx, groups=c)
    x = F.conv2d(F.pad(x, (0, 0, pad, pad), mode="replicate"), ky, groups=c)
    return x


_DCT8 = None


def _dct_matrix(device):
    global _DCT8
    if _DCT8 is None or _DCT8.device != device:
        n = 8
        k = torch.arange(n, dtype=torch.float32)
        mat = torch.cos((2 * k[None, :] + 1) * k[:, None] * torch.pi / (2 * n))
        mat = mat * torch.sqrt(torch.tensor(2.0 / n))
        mat[0] = mat[0] / torch.sqrt(torch.tensor(2.0))
        _DCT8 = mat.to(device)
    return _DCT8


def torch_jpeg_soft(x, quality=80.0):
    """Differentiable JPEG stand-in: 8x8 DCT, quantize with a soft round."""
    b, c, h, w = x.shape
    ph, pw = (-h) % 8, (-w) % 8
    x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    hh, ww = x.shape[2], x.shape[3]
    blocks = x.unfold(2, 8, 8).unfold(3, 8, 8)  # b,c,hb,wb,8,8
    m = _dct_matrix(x.device)
    dct = torch.einsum("ij,bchwjk,lk->bchwil", m, blocks * 255 - 128, m)
    scale = 50.0 / quality if quality < 50 else 2.0 - quality / 50.0
    q = torch.clamp(torch.tensor(16.0) * max(scale, 0.02), min=1.0)
    coeff = dct / q
    soft = coeff - torch.sin(2 * torch.pi * coeff) / (2 * torch.pi)
    deq = soft * q
    rec = torch.einsum("ji,bchwjk,kl->bchwil", m, deq, m)
    rec = (rec + 128) / 255.0
    out = rec.permute(0, 1, 2, 4, 3, 5).reshape(b, c, hh, ww)
    return torch.clamp(out[:, :, :h, :w], 0, 1)


def torch_distort(x, kind, rng: torch.Generator):
    """One randomly parameterized differentiable distortion."""
    def unif(lo, hi):
        return lo + (hi - lo) * torch.rand(1, generator=rng).item()

    if kind == "identity":
        return x
    if kind == "gaussian_blur":
        return torch_blur(x, unif(0.3, 1.5))
    if kind == "gaussian_noise":
        noise = torch.randn(x.shape, generator=rng) * unif(0.01, 0.06)
        return torch.clamp(x + noise.to(x.device), 0, 1)
    if kind == "brightness":
        return torch.clamp(x * unif(0.7, 1.4), 0, 1)
    if kind == "contrast":
        return torch.clamp((x - 0.5) * unif(0.6, 1.5) + 0.5, 0, 1)
    if kind == "jpeg_soft":
        return torch_jpeg_soft(x, unif(60.0, 95.0))
    if kind == "affine":
        return torch_affine(x, rng)
    if kind == "print_scan_soft":
        return torch_print_scan_soft(x, rng)
    raise ValueError(f"not a differentiable training distortion: {kind!r}")


def torch_print_scan_soft(x, rng: torch.Generator):
    """Differentiable surrogate for the print-scan channel.

    Chains the same stages as :func:`print_scan` — warp, dot gain, blur,
    sensor noise, gamma, illumination gradient — using smooth operations.
    """
    def unif(lo, hi):
        return lo + (hi - lo) * torch.rand(1, generator=rng).item()

    x = torch_affine(x, rng, max_shift=0.02, max_rot=0.03, max_scale=0.02)
    ink = 1.0 - x
    thick = F.max_pool2d(ink, 3, stride=1, padding=1)
    t = unif(0.0, 1.0)
    x = 1.0 - ((1 - t) * ink + t * thick)
    x = torch_blur(x, unif(0.4, 1.0))
    noise = torch.randn(x.shape, generator=rng) * unif(0.005, 0.03)
    x = torch.clamp(x + noise.to(x.device), 1e-4, 1)
    x = x ** unif(0.8, 1.2)
    grad = unif(-0.05, 0.05) * torch.linspace(-1, 1, x.shape[3],
                                              device=x.device)
    return torch.clamp(x * (1.0 + grad[None, None, None, :]), 0, 1)


def torch_affine(x, rng: torch.Generator, max_shift=0.04, max_rot=0.05,
                 max_scale=0.04):
    """Small random affine warp; trains the extractor's spatial aligner."""
    b = x.shape[0]
    r = (torch.rand(b, 5, generator=rng) * 2 - 1).to(x.device)
    angle = r[:, 0] * max_rot
    scale = 1.0 + r[:, 1] * max_scale
    tx, ty = r[:, 2] * max_shift, r[:, 3] * max_shift
    cos, sin = torch.cos(angle) * scale, torch.sin(angle) * scale
    theta = torch.stack([
        torch.stack([cos, -sin, tx], dim=1),
        torch.stack([sin, cos, ty], dim=1)], dim=1)
    grid = F.affine_grid(theta, x.shape, align_corners=False)
    return F.grid_sample(x, grid, align_corners=False,
                         padding_mode="border")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def sweep_specs(channel_cfg):
    """(kind, param-name, level, spec) tuples for the evaluation sweeps."""
    out = []
    for q in channel_cfg.jpeg_qualities:
        out.append(("jpeg", "quality", q,
                    DistortionSpec("jpeg", {"quality": q})))
    for s in channel_cfg.blur_sigmas:
        out.append(("gaussian_blur", "sigma", s,
                    DistortionSpec("gaussian_blur", {"sigma": s})))
    for s in channel_cfg.noise_sigmas:
        out.append(("gaussian_noise", "sigma", s,
                    DistortionSpec("gaussian_noise", {"sigma": s})))
    for f in channel_cfg.factor_grid:
        for kind in ("brightness", "contrast", "saturation"):
            out.append((kind, "factor", f,
                        DistortionSpec(kind, {"factor": f})))
    for sh in channel_cfg.hue_shifts:
        out.append(("hue", "shift", sh, DistortionSpec("hue", {"shift": sh})))
    for p in channel_cfg.salt_pepper:
        out.append(("salt_pepper", "p", p,
                    DistortionSpec("salt_pepper", {"p": p})))
    out.append(("roi_crop", "margin", 2, DistortionSpec("roi_crop")))
    out.append(("bg_transparency", "-", 0,
                DistortionSpec("bg_transparency")))
    out.append(("print_scan", "-", 0,
                DistortionSpec("print_scan",
                               {"profile": channel_cfg.print_scan})))
    return out
