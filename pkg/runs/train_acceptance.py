"""One-off driver: train the default toy system for the acceptance suite."""
import sys
from pathlib import Path

from sigmark.config import RunConfig
from sigmark.pipeline import train_full_pipeline

cfg = RunConfig()
cfg.output_dir = "runs/acceptance"
train_full_pipeline(cfg, Path("runs/acceptance"))
