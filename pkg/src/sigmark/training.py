"""Training loops for the four learned stages.

Stage order: content encoder (supervised contrastive), latent codec
(VAE fine-tune), conditional denoiser jointly with the style encoder, and
finally the watermark embedder/extractor against frozen upstream weights.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import Adam
from torch.optim.lr_scheduler import CosineAnnealingLR

from . import channel, diffusion, glyph, losses
from .errors import DegenerateBatch
from .models import (ConditionalDenoiser, ImageEncoder, LatentCodec,
                     ProjectionHead, WatermarkEmbedder, WatermarkExtractor)


def to_tensor(images):
    """(N, H, W) or (N, H, W, C) numpy in [0,1] -> (N, C, H, W) float32."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[:, None]
    else:
        arr = arr.transpose(0, 3, 1, 2)
    return torch.from_numpy(arr)


def _balanced_batch(labels, batch, per_class, rng):
    """Indices with >= per_class samples for each included identity."""
    ids = np.unique(labels)
    n_classes = max(2, batch // per_class)
    chosen = rng.choice(ids, size=min(n_classes, len(ids)), replace=False)
    idx = []
    for cid in chosen:
        pool = np.nonzero(labels == cid)[0]
        take = min(per_class, len(pool))
        idx.extend(rng.choice(pool, size=take, replace=False))
    return np.asarray(idx)


def _check_finite(loss, stage):
    if not torch.isfinite(loss):
        raise FloatingPointError(f"{stage}: non-finite loss {loss.item()}")


def train_content(images, labels, cfg, seed=0, log=None):
    """Supervised-contrastive training of the content encoder."""
    torch.manual_seed(seed)
    x = to_tensor(images)
    encoder = ImageEncoder(in_channels=x.shape[1], dim=cfg.content.dim)
    proj = ProjectionHead(cfg.content.dim, cfg.content.proj_dim)
    opt = Adam(list(encoder.parameters()) + list(proj.parameters()),
               lr=cfg.content.lr)
    rng = np.random.default_rng(seed)
    steps_per_epoch = max(1, len(x) // cfg.content.batch)
    log = log if log is not None else []
    step = 0
    for _ in range(cfg.content.epochs):
        for _ in range(steps_per_epoch):
            idx = _balanced_batch(labels, cfg.content.batch, 4, rng)
            emb = proj(encoder(x[idx]))
            try:
                loss = losses.supcon_loss(emb, torch.from_numpy(labels[idx]),
                                          cfg.content.tau)
            except DegenerateBatch:
                continue
            loss = loss / len(idx)
            _check_finite(loss, "content")
            opt.zero_grad()
            loss.backward()
            opt.step()
            log.append({"step": step, "loss": float(loss.item())})
            step += 1
    encoder.eval()
    proj.eval()
    return encoder, proj, log


def vae_finetune(images, cfg, seed=0, init=None, log=None):
    """Fit the latent codec with reconstruction + masked + KL terms."""
    torch.manual_seed(seed)
    x = to_tensor(images)
    masks = []
    for img in images:
        try:
            m = glyph.preprocess(img, open_radius=0).astype(np.float32)
        except Exception:
            m = np.zeros(img.shape[:2], dtype=np.float32)
        masks.append(m)
    masks = torch.from_numpy(np.asarray(masks))[:, None]
    codec = init if init is not None else LatentCodec(
        in_channels=x.shape[1], latent_channels=cfg.vae.latent_channels,
        base=cfg.vae.base_channels)
    opt = Adam(codec.parameters(), lr=cfg.vae.lr)
    rng = np.random.default_rng(seed)
    steps_per_epoch = max(1, len(x) // cfg.vae.batch)
    log = log if log is not None else []
    initial = None
    step = 0
    for _ in range(cfg.vae.epochs):
        for _ in range(steps_per_epoch):
            idx = rng.choice(len(x), size=min(cfg.vae.batch, len(x)),
                             replace=False)
            recon, mu, logvar = codec(x[idx])
            loss, parts = losses.vae_loss(recon, x[idx], mu, logvar,
                                          masks[idx], cfg.vae.kl_weight)
            _check_finite(loss, "vae")
            if initial is None:
                initial = loss.item()
            if loss.item() > 10 * max(initial, 1e-8):
                raise FloatingPointError("vae: loss diverged")
            opt.zero_grad()
            loss.backward()
            opt.step()
            log.append({"step": step, "loss": float(loss.item()), **parts})
            step += 1
    codec.eval()
    return codec, log


def train_diffusion(images, labels, codec, content_encoder, cfg, seed=0,
                    log=None):
    """Noise-prediction training; the style encoder is learned jointly."""
    torch.manual_seed(seed)
    x = to_tensor(images)
    schedule = diffusion.make_schedule(
        cfg.diffusion.timesteps, cfg.diffusion.schedule,
        cfg.diffusion.beta_start, cfg.diffusion.beta_end)
    denoiser = ConditionalDenoiser(
        latent_channels=cfg.vae.latent_channels,
        base=cfg.diffusion.base_channels, content_dim=cfg.content.dim,
        style_dim=cfg.style.dim, content_concat=cfg.diffusion.content_concat)
    style_encoder = ImageEncoder(in_channels=x.shape[1], dim=cfg.style.dim)
    opt = Adam(list(denoiser.parameters())
               + list(style_encoder.parameters()), lr=cfg.diffusion.lr)
    sched = CosineAnnealingLR(opt, T_max=cfg.diffusion.steps)
    rng = np.random.default_rng(seed)
    log = log if log is not None else []

    with torch.no_grad():
        z_all = codec.encode(x)
        f_c_all = content_encoder(x)

    for step in range(cfg.diffusion.steps):
        idx = rng.choice(len(x), size=min(cfg.diffusion.batch, len(x)),
                         replace=False)
        z0 = z_all[idx]
        t_idx = torch.from_numpy(
            rng.integers(1, schedule.T + 1, size=len(idx)))
        eps = torch.randn(z0.shape)
        zt = diffusion.forward_sample_torch(z0, t_idx, eps, schedule)
        f_s = style_encoder(x[idx])
        eps_pred = denoiser(zt, t_idx, f_s, f_c_all[idx])
        loss = F.mse_loss(eps_pred, eps)
        _check_finite(loss, "diffusion")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        log.append({"step": step, "loss": float(loss.item())})
    denoiser.eval()
    style_encoder.eval()
    return denoiser, style_encoder, schedule, log


def reference_styles(images, labels, style_encoder, k):
    """Per-identity mean style embedding over up to k samples."""
    refs = {}
    x = to_tensor(images)
    with torch.no_grad():
        f_s = style_encoder(x)
    for cid in np.unique(labels):
        pool = np.nonzero(labels == cid)[0][:k]
        refs[int(cid)] = f_s[pool].mean(dim=0)
    return refs


def watermark_train(images, labels, frozen, cfg, seed=0, log=None):
    """Joint embedder/extractor training through the frozen generator.

    ``frozen`` holds codec, content_encoder, style_encoder, denoiser and
    schedule; their parameters receive no updates (asserted by checksum in
    the tests). Training runs in three phases: a clean extractor warm start
    on a pregenerated pool, a distortion fine-tune on the same pool, and a
    joint phase that backpropagates the full four-term loss through the
    generator with one randomly sampled differentiable distortion per batch.
    """
    torch.manual_seed(seed)
    x = to_tensor(images)
    codec = frozen["codec"]
    content_encoder = frozen["content_encoder"]
    style_encoder = frozen["style_encoder"]
    denoiser = frozen["denoiser"]
    schedule = frozen["schedule"]
    for m in (codec, content_encoder, style_encoder, denoiser):
        for p in m.parameters():
            p.requires_grad_(False)

    embedder = WatermarkEmbedder(cfg.watermark.bits, cfg.style.dim,
                                 cfg.watermark.gate_init)
    extractor = WatermarkExtractor(cfg.watermark.bits, cfg.style.dim,
                                   in_channels=x.shape[1])
    # the embedder moves slowly so the joint phase does not invalidate the
    # bits -> image code the warmed-up extractor has already learned
    opt = Adam([{"params": extractor.parameters()},
                {"params": embedder.parameters(),
                 "lr": cfg.watermark.lr * 0.1}],
               lr=cfg.watermark.lr)
    sched = CosineAnnealingLR(opt, T_max=cfg.watermark.steps)
    rng = np.random.default_rng(seed)
    torch_rng = torch.Generator().manual_seed(seed)
    refs = reference_styles(images, labels, style_encoder,
                            cfg.watermark.reference_k)
    with torch.no_grad():
        f_c_all = content_encoder(x)
    wcfg = cfg.watermark
    latent_hw = x.shape[2] // codec.downsample
    # every watermarked generation starts from the same canonical Z_T; the
    # batch dimension repeats it so bits are the only varying conditioning
    canonical = torch.randn(
        (1, cfg.vae.latent_channels, latent_hw, latent_hw),
        generator=torch.Generator().manual_seed(wcfg.noise_seed))
    canonical_noise = canonical.expand(max(wcfg.batch, wcfg.warmup_batch),
                                       -1, -1, -1)
    log = log if log is not None else []

    # -- phase 1: warm-start the extractor on a pregenerated pool ----------
    # 1a trains on clean pool images only, 1b continues on the same pool
    # under random distortions at a reduced rate. The order matters: with
    # distortions from step 0 the extractor never finds the bit signal and
    # collapses to an image-independent prediction.
    if wcfg.warmup_pool > 0 and (wcfg.warmup_steps > 0
                                 or wcfg.finetune_steps > 0):
        pool_x, pool_bits, pool_ref = [], [], []
        with torch.no_grad():
            chunk = wcfg.warmup_batch
            for start in range(0, wcfg.warmup_pool, chunk):
                n = min(chunk, wcfg.warmup_pool - start)
                idx = rng.choice(len(x), size=n, replace=True)
                ref = torch.stack([refs[int(labels[i])] for i in idx])
                bits = torch.from_numpy(
                    rng.integers(0, 2, size=(n, wcfg.bits))).float()
                fused = embedder(ref, bits)
                z_hat = diffusion.ddim_sample(
                    denoiser, fused, f_c_all[idx], schedule,
                    cfg.diffusion.ddim_steps, eta=0.0,
                    noise=canonical_noise[:n])
                pool_x.append(codec.decode(z_hat))
                pool_bits.append(bits)
                pool_ref.append(ref)
        pool_x = torch.cat(pool_x)
        pool_bits = torch.cat(pool_bits)
        pool_ref = torch.cat(pool_ref)

        def pool_phase(phase, n_steps, lr, distort):
            opt_p = Adam(extractor.parameters(), lr=lr)
            sched_p = CosineAnnealingLR(opt_p, T_max=max(n_steps, 1))
            for step in range(n_steps):
                idx = torch.from_numpy(
                    rng.integers(0, len(pool_x), size=wcfg.warmup_batch))
                batch = pool_x[idx]
                if distort:
                    kind = wcfg.train_distortions[
                        int(rng.integers(len(wcfg.train_distortions)))]
                    with torch.no_grad():
                        batch = channel.torch_distort(batch, kind, torch_rng)
                logits, recovered = extractor(batch, pool_ref[idx])
                loss = (wcfg.lambda_secret
                        * losses.secret_loss(pool_bits[idx], logits)
                        + wcfg.lambda_recover
                        * losses.recover_loss(pool_ref[idx], recovered))
                _check_finite(loss, f"watermark-{phase}")
                opt_p.zero_grad()
                loss.backward()
                opt_p.step()
                sched_p.step()
                if step % 50 == 0 or step == n_steps - 1:
                    acc = float(((logits > 0).float()
                                 == pool_bits[idx]).float().mean())
                    log.append({"phase": phase, "step": step,
                                "loss": float(loss.item()), "bit_acc": acc})

        pool_phase("warmup", wcfg.warmup_steps, wcfg.lr, distort=False)
        pool_phase("finetune", wcfg.finetune_steps, wcfg.finetune_lr,
                   distort=True)

    # -- phase 2: joint embedder/extractor training through the generator --
    for step in range(wcfg.steps):
        idx = rng.choice(len(x), size=min(wcfg.batch, len(x)), replace=False)
        ref = torch.stack([refs[int(labels[i])] for i in idx])
        bits = torch.from_numpy(
            rng.integers(0, 2, size=(len(idx), wcfg.bits))).float()
        fused = embedder(ref, bits)
        noise = canonical_noise[:len(idx)]
        z_hat = diffusion.ddim_sample(denoiser, fused, f_c_all[idx],
                                      schedule, cfg.diffusion.ddim_steps,
                                      eta=0.0, noise=noise)
        generated = codec.decode(z_hat)
        kind = wcfg.train_distortions[
            int(rng.integers(len(wcfg.train_distortions)))]
        distorted = channel.torch_distort(generated, kind, torch_rng)
        logits, recovered = extractor(distorted, ref)

        l_secret = losses.secret_loss(bits, logits)
        l_recover = losses.recover_loss(ref, recovered)
        l_style = losses.style_loss(ref, fused, wcfg.margin, wcfg.lambda_t)
        src_feats = losses.feature_map_as_set(
            content_encoder.feature_map(x[idx]))
        gen_feats = losses.feature_map_as_set(
            content_encoder.feature_map(generated))
        l_content = losses.content_loss(src_feats, gen_feats)
        loss = (wcfg.lambda_secret * l_secret
                + wcfg.lambda_recover * l_recover
                + wcfg.lambda_style * l_style
                + wcfg.lambda_content * l_content)
        _check_finite(loss, "watermark")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        acc = float(((logits > 0).float() == bits).float().mean())
        log.append({"step": step, "loss": float(loss.item()),
                    "secret": float(l_secret.item()),
                    "recover": float(l_recover.item()),
                    "style": float(l_style.item()),
                    "content": float(l_content.item()),
                    "bit_acc": acc})
    embedder.eval()
    extractor.eval()
    return embedder, extractor, log
