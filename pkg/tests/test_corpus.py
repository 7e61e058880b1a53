import dataclasses

import numpy as np
import pytest

from sigmark import config, corpus
from sigmark.errors import RenderDegenerate


class TestIdentity:
    def test_seed_determinism(self):
        a = corpus.generate_identity(3, np.random.default_rng(5))
        b = corpus.generate_identity(3, np.random.default_rng(5))
        assert a.base_slant == b.base_slant
        assert all(np.array_equal(x, y)
                   for x, y in zip(a.stroke_splines, b.stroke_splines))

    def test_twenty_identities_distinct(self):
        rng = np.random.default_rng(0)
        specs = [corpus.generate_identity(i, rng) for i in range(20)]
        for i in range(20):
            for j in range(i + 1, 20):
                a, b = specs[i], specs[j]
                if len(a.stroke_splines) != len(b.stroke_splines):
                    continue
                dist = sum(np.abs(x - y).sum() if x.shape == y.shape else 1.0
                           for x, y in zip(a.stroke_splines,
                                           b.stroke_splines))
                assert dist > 0

    def test_control_points_in_bounds(self):
        rng = np.random.default_rng(2)
        for i in range(10):
            spec = corpus.generate_identity(i, rng, canvas=(64, 64))
            for stroke in spec.stroke_splines:
                assert (stroke >= 0).all() and (stroke <= 1).all()
            assert len(spec.stroke_splines) >= 2


class TestRender:
    def test_seed_determinism(self):
        spec = corpus.generate_identity(0, np.random.default_rng(1))
        a = corpus.render_sample(spec, 0.0, np.random.default_rng(9))
        b = corpus.render_sample(spec, 0.0, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_foreground_ratio_regime(self):
        rng = np.random.default_rng(0)
        ratios = []
        for i in range(100):
            spec = corpus.generate_identity(i, rng)
            img = corpus.render_sample(spec, 1.0, rng)
            ratio = (img < 0.5).mean()
            ratios.append(ratio)
            assert corpus.FOREGROUND_BAND[0] <= ratio \
                <= corpus.FOREGROUND_BAND[1]
        # sparsity regime around 14% foreground
        assert abs(np.mean(ratios) - 0.14) <= 0.08

    def test_values_in_range(self, sample_signature):
        assert sample_signature.min() >= 0
        assert sample_signature.max() <= 1

    def test_channels(self):
        spec = corpus.generate_identity(0, np.random.default_rng(1))
        img = corpus.render_sample(spec, 0.5, np.random.default_rng(2),
                                   channels=3)
        assert img.shape == (64, 64, 3)


class TestBuildCorpus:
    @pytest.fixture
    def small_cfg(self):
        cfg = config.RunConfig()
        cfg.corpus = dataclasses.replace(
            cfg.corpus, n_identities=5, samples_per_identity=4)
        return cfg

    def test_manifest_arithmetic_and_split(self, small_cfg, tmp_path_factory):
        out = tmp_path_factory.mktemp("corpus")
        manifest = corpus.build_corpus(small_cfg, out)
        assert len(manifest["entries"]) == 5 * 4
        train_ids = {e["identity_id"] for e in manifest["entries"]
                     if e["split"] == "train"}
        eval_ids = {e["identity_id"] for e in manifest["entries"]
                    if e["split"] == "eval"}
        assert len(train_ids) == 4 and len(eval_ids) == 1
        assert train_ids.isdisjoint(eval_ids)

    def test_augment_factor_doubles_train(self, small_cfg, tmp_path_factory):
        cfg = config.RunConfig()
        cfg.corpus = dataclasses.replace(
            small_cfg.corpus, augment_factor=2)
        out = tmp_path_factory.mktemp("corpus_aug")
        manifest = corpus.build_corpus(cfg, out)
        train = [e for e in manifest["entries"] if e["split"] == "train"]
        evals = [e for e in manifest["entries"] if e["split"] == "eval"]
        assert len(train) == 2 * 4 * 4
        assert len(evals) == 1 * 4
        assert all(e["provenance"] == "rendered" for e in evals)
        augmented = [e for e in train if e["provenance"] == "augmented"]
        assert len(augmented) == 4 * 4

    def test_rebuild_byte_identical(self, small_cfg, tmp_path_factory):
        out1 = tmp_path_factory.mktemp("c1")
        out2 = tmp_path_factory.mktemp("c2")
        corpus.build_corpus(small_cfg, out1)
        corpus.build_corpus(small_cfg, out2)
        assert corpus.manifest_hash(out1 / "manifest.jsonl") \
            == corpus.manifest_hash(out2 / "manifest.jsonl")
        # image bytes too
        for p1 in sorted((out1 / "images").iterdir()):
            p2 = out2 / "images" / p1.name
            assert p1.read_bytes() == p2.read_bytes()

    def test_entries_load_in_range(self, small_cfg, tmp_path_factory):
        out = tmp_path_factory.mktemp("c3")
        manifest = corpus.build_corpus(small_cfg, out)
        x, y = corpus.load_split(manifest, out, "train")
        assert x.shape[1:] == (64, 64)
        assert x.min() >= 0 and x.max() <= 1
        assert len(x) == len(y)
