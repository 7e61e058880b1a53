import dataclasses

import pytest

from sigmark import config
from sigmark.errors import ConfigError


class TestFromDict:
    def test_empty_gives_defaults(self):
        cfg = config.config_from_dict({})
        assert cfg.watermark.bits == 16
        assert cfg.payload.total_bits == 16
        assert cfg.corpus.n_identities == 20
        assert cfg.corpus.samples_per_identity == 32
        assert cfg.corpus.image_size == 64

    def test_nested_override(self):
        cfg = config.config_from_dict(
            {"diffusion": {"timesteps": 500},
             "channel": {"print_scan": {"blur_sigma": 0.3}}})
        assert cfg.diffusion.timesteps == 500
        assert cfg.channel.print_scan.blur_sigma == 0.3
        # untouched siblings keep defaults
        assert cfg.diffusion.schedule == "linear"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            config.config_from_dict({"difusion": {}})
        with pytest.raises(ConfigError, match="diffusion"):
            config.config_from_dict({"diffusion": {"timestps": 10}})

    def test_lists_become_tuples(self):
        cfg = config.config_from_dict(
            {"channel": {"jpeg_qualities": [80, 60]}})
        assert cfg.channel.jpeg_qualities == (80, 60)

    def test_payload_width_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="sum to watermark.bits"):
            config.config_from_dict({"payload": {"record_bits": 7}})

    def test_bad_train_fraction(self):
        with pytest.raises(ConfigError, match="train_fraction"):
            config.config_from_dict({"corpus": {"train_fraction": 1.0}})

    def test_bad_schedule(self):
        with pytest.raises(ConfigError, match="schedule"):
            config.config_from_dict({"diffusion": {"schedule": "quad"}})


class TestYamlRoundTrip:
    def test_save_load_identical(self, tmp_path):
        cfg = config.config_from_dict({"seed": 7,
                                       "watermark": {"steps": 99}})
        path = tmp_path / "run.yaml"
        config.save_config(cfg, path)
        back = config.load_config(path)
        assert back == cfg
        assert back.config_hash() == cfg.config_hash()


class TestHash:
    def test_stable_and_sensitive(self):
        a = config.RunConfig()
        b = config.RunConfig()
        assert a.config_hash() == b.config_hash()
        c = dataclasses.replace(a)
        c.watermark = dataclasses.replace(c.watermark, steps=1)
        assert c.config_hash() != a.config_hash()
        assert len(a.config_hash()) == 16


class TestFullScale:
    def test_layout_and_sizes(self):
        cfg = config.full_scale_config()
        assert cfg.watermark.bits == 48
        assert (cfg.payload.record_bits, cfg.payload.digest_bits,
                cfg.payload.expiry_bits, cfg.payload.crc_bits) \
            == (20, 12, 8, 8)
        assert cfg.payload.total_bits == 48
        assert cfg.corpus.image_size == 224
        assert cfg.corpus.channels == 3
        assert cfg.augment.sigma_scale == 4.0
        config._validate(cfg)   # internally consistent
