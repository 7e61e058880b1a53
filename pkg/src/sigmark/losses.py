"""Training objectives: supervised contrastive, VAE terms, watermark terms."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import DegenerateBatch


def supcon_loss(embeddings, labels, tau):
    """Supervised contrastive loss over L2-normalized embeddings.

    Sum over anchors of -1/|P(k)| * sum_p log(exp(c_k.c_p/tau) /
    sum_{a != k} exp(c_k.c_a/tau)). Anchors without positives are skipped;
    raises DegenerateBatch when no anchor has one.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    b = embeddings.shape[0]
    if b < 2:
        raise DegenerateBatch("batch too small for contrastive loss")
    labels = labels.view(-1)
    sim = embeddings @ embeddings.T / tau
    self_mask = torch.eye(b, dtype=torch.bool, device=embeddings.device)
    pos_mask = (labels[:, None] == labels[None, :]) & ~self_mask

    n_pos = pos_mask.sum(dim=1)
    anchors = n_pos > 0
    if not anchors.any():
        raise DegenerateBatch("no anchor has a positive example")

    sim = sim.masked_fill(self_mask, float("-inf"))
    log_prob = sim - torch.logsumexp(sim, dim=1, keepdim=True)
    log_prob = log_prob.masked_fill(self_mask, 0.0)  # diag is -inf * mask 0
    per_anchor = -(log_prob * pos_mask).sum(dim=1) / n_pos.clamp(min=1)
    return per_anchor[anchors].sum()


def gaussian_kl(mu, logvar):
    """KL(N(mu, sigma^2) || N(0, I)) summed over latent dims, batch mean."""
    kl = 0.5 * (mu ** 2 + torch.exp(logvar) - logvar - 1.0)
    return kl.flatten(1).sum(dim=1).mean()


def vae_loss(recon, target, mu, logvar, mask, kl_weight):
    """Reconstruction + mask-emphasized reconstruction + weighted KL."""
    rec = F.mse_loss(recon, target)
    if mask.sum() > 0:
        masked = ((recon - target) ** 2 * mask).sum() / mask.sum()
    else:
        masked = torch.zeros((), device=recon.device)
    kl = gaussian_kl(mu, logvar)
    return rec + masked + kl_weight * kl, {"rec": rec.item(),
                                           "masked": masked.item(),
                                           "kl": kl.item()}


def secret_loss(bits, logits):
    """BCE between true bits and predicted bit logits."""
    return F.binary_cross_entropy_with_logits(logits, bits.float())


def recover_loss(reference, recovered):
    return F.mse_loss(recovered, reference)


def style_loss(reference, fused, margin, lambda_t):
    """MSE pull plus a hinge that penalizes sub-margin perturbations."""
    mse = F.mse_loss(fused, reference)
    dist = torch.linalg.vector_norm(reference - fused, dim=-1)
    hinge = F.relu(margin - dist).mean()
    return mse + lambda_t * hinge


def contextual_similarity(feats_a, feats_b, bandwidth=0.5, eps=1e-5):
    """CX similarity between two feature sets (B, N, D) in [0, 1]."""
    a = F.normalize(feats_a - feats_a.mean(dim=1, keepdim=True), dim=-1)
    b = F.normalize(feats_b - feats_b.mean(dim=1, keepdim=True), dim=-1)
    cos = torch.einsum("bnd,bmd->bnm", a, b)
    dist = 1.0 - cos
    rel = dist / (dist.min(dim=1, keepdim=True).values + eps)
    w = torch.exp((1.0 - rel) / bandwidth)
    cx_ij = w / w.sum(dim=1, keepdim=True)
    cx = cx_ij.max(dim=1).values.mean(dim=1)
    return cx.clamp(eps, 1.0)


def content_loss(feats_src, feats_gen):
    """Contextual loss, -log CX, over encoder feature-map sets."""
    return -torch.log(contextual_similarity(feats_src, feats_gen)).mean()


def feature_map_as_set(fmap):
    """(B, C, H, W) feature map -> (B, H*W, C) feature set."""
    b, c, h, w = fmap.shape
    return fmap.reshape(b, c, h * w).transpose(1, 2)
