"""Configuration, logs, manifests and the CLI pipeline."""

from .config import ConfigError, ExperimentConfig
from .logs import JsonlLog
from .manifest import ManifestMismatch, RunManifest, build_manifest

__all__ = ["ConfigError", "ExperimentConfig", "JsonlLog", "ManifestMismatch", "RunManifest", "build_manifest"]
