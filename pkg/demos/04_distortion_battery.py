"""The distortion battery an extracted watermark must survive.

Applies every evaluation-time distortion to one signature and prints a
fidelity table (PSNR/SSIM against the clean image). The differentiable
training subset is listed separately with a gradient-flow check.
"""

from pathlib import Path

import numpy as np
import torch

from sigmark import channel, config, corpus, metrics

OUT = Path(__file__).parent / "output" / "distortions"
OUT.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(7)
spec = corpus.generate_identity(0, rng)
image = corpus.render_sample(spec, 1.0, rng)
corpus.save_image(image, OUT / "clean.png")

cfg = config.RunConfig()
print(f"{'distortion':<18}{'param':<10}{'level':>7}{'PSNR dB':>9}"
      f"{'SSIM':>7}")
for kind, pname, level, dspec in channel.sweep_specs(cfg.channel):
    out = channel.apply(image, dspec, np.random.default_rng(0))
    if out.ndim == 3:                       # color composites
        out_gray = out.mean(axis=2)
    else:
        out_gray = out
    p = metrics.psnr(image, out_gray)
    s = metrics.ssim(image, out_gray)
    print(f"{kind:<18}{pname:<10}{level:>7.2f}{p:>9.1f}{s:>7.3f}")
    corpus.save_image(out_gray, OUT / f"{kind}_{level}.png")

print("\ndifferentiable training subset (gradients flow end to end):")
x = torch.from_numpy(image).float()[None, None]
for kind in channel.DIFFERENTIABLE_KINDS:
    xg = x.clone().requires_grad_(True)
    y = channel.torch_distort(xg, kind, torch.Generator().manual_seed(0))
    y.sum().backward()
    print(f"  {kind:<16} grad norm {xg.grad.norm():.3e}")
print(f"\nimages written to {OUT}")
