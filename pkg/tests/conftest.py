import dataclasses

import numpy as np
import pytest

from sigmark import config, corpus


@pytest.fixture(scope="session")
def sample_signature():
    rng = np.random.default_rng(7)
    spec = corpus.generate_identity(0, rng)
    return corpus.render_sample(spec, 1.0, rng)


@pytest.fixture(scope="session")
def tiny_dataset():
    """4 identities x 6 samples at 64x64, labels alongside."""
    rng = np.random.default_rng(11)
    imgs, labs = [], []
    for i in range(4):
        spec = corpus.generate_identity(i, rng)
        for _ in range(6):
            imgs.append(corpus.render_sample(spec, 1.0, rng))
            labs.append(i)
    return np.asarray(imgs), np.asarray(labs)


@pytest.fixture(scope="session")
def tiny_config():
    cfg = config.RunConfig()
    cfg.content = dataclasses.replace(cfg.content, epochs=1, batch=8)
    cfg.vae = dataclasses.replace(cfg.vae, epochs=2, batch=8)
    cfg.diffusion = dataclasses.replace(cfg.diffusion, steps=8, batch=8,
                                        ddim_steps=3)
    cfg.watermark = dataclasses.replace(cfg.watermark, steps=4, batch=4,
                                        warmup_pool=8, warmup_steps=4,
                                        warmup_batch=4, finetune_steps=4)
    return cfg
