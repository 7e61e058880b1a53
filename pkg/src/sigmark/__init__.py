"""Generative watermarking for static handwritten-signature images."""

from .config import RunConfig, config_from_dict, full_scale_config, load_config

__all__ = ["RunConfig", "config_from_dict", "full_scale_config",
           "load_config"]

__version__ = "0.1.0"
