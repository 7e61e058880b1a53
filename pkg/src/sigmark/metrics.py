"""Evaluation metrics: bit accuracy, PSNR, SSIM, style-distance proxy."""

from __future__ import annotations

import numpy as np
from skimage.metrics import structural_similarity

PSNR_CAP_DB = 99.0


def bit_accuracy(w, w_prime):
    """Fraction of matching bits between two equal-length bit vectors."""
    w = np.asarray(w).ravel()
    w_prime = np.asarray(w_prime).ravel()
    if w.shape != w_prime.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {w_prime.shape}")
    return float((w == w_prime).mean())


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images in [0,1]; capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def ssim(a, b, window=7):
    """Mean structural similarity, uniform 7x7 windows, data range 1.0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], window)
                              for c in range(a.shape[2])]))
    return float(structural_similarity(a, b, win_size=window,
                                       data_range=1.0))


def style_distance_proxy(real_embeddings, generated_embeddings):
    """Distance between mean style embeddings of two image sets.

    A stand-in fidelity score computed with our own style encoder; it is not
    comparable to published HWD/FID/KID numbers.
    """
    real = np.asarray(real_embeddings, dtype=np.float64)
    gen = np.asarray(generated_embeddings, dtype=np.float64)
    if real.size == 0 or gen.size == 0:
        raise ValueError("both embedding sets must be nonempty")
    return float(np.linalg.norm(real.mean(axis=0) - gen.mean(axis=0)))


def style_distance_paired(real_embeddings, generated_embeddings):
    """Mean per-sample style distance between paired image sets.

    Unlike :func:`style_distance_proxy`, a generator that collapses to the
    dataset mean cannot score well here; used by the conditioning ablations.
    """
    real = np.asarray(real_embeddings, dtype=np.float64)
    gen = np.asarray(generated_embeddings, dtype=np.float64)
    if real.shape != gen.shape or real.size == 0:
        raise ValueError("paired embedding sets must share a nonempty shape")
    return float(np.mean(np.linalg.norm(real - gen, axis=-1)))
