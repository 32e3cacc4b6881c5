"""Run manifest: the reproducibility envelope every report points at."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .. import __version__
from ..diagnostics import ANCHOR_RULES_VERSION
from ..prompting import prompt_hashes
from .config import ExperimentConfig


class ManifestMismatch(ValueError):
    pass


@dataclass
class RunManifest:
    config_hash: str
    dataset_sha256: str
    index_sha256: str
    prompt_hashes: dict[str, str]
    models: list[dict]
    judge: dict | None
    embedder: dict
    protocol: dict
    thresholds: dict
    anchor_rules_version: str = ANCHOR_RULES_VERSION
    citation_format: str = "[chunk_id]"
    tool_version: str = __version__
    created_at: str | None = None
    effective_config: dict = field(default_factory=dict)

    def identity(self) -> dict:
        """Fields that must not change while a run directory is being filled."""
        d = asdict(self)
        for k in ("created_at", "effective_config", "config_hash", "models"):
            d.pop(k)
        return d

    def identity_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.identity(), sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["identity_sha256"] = self.identity_hash()
        if d["created_at"] is None:
            d.pop("created_at")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def build_manifest(cfg: ExperimentConfig, dataset_sha256: str, index_sha256: str) -> RunManifest:
    effective = cfg.to_dict()
    return RunManifest(
        config_hash=cfg.hash(),
        dataset_sha256=dataset_sha256,
        index_sha256=index_sha256,
        prompt_hashes=prompt_hashes(),
        models=[m.to_dict() for m in cfg.models],
        judge=cfg.judge.to_dict() if cfg.judge else None,
        embedder=cfg.embedder.to_dict(),
        protocol={"window": cfg.window, "overlap": cfg.overlap, "k": cfg.k, "budget": cfg.budget},
        thresholds={"coverage": cfg.coverage_threshold, "sufficiency": cfg.sufficiency_threshold},
        created_at=None if cfg.deterministic else datetime.now(timezone.utc).isoformat(timespec="seconds"),
        effective_config=effective,
    )


def write_manifest(path: str | Path, manifest: RunManifest) -> None:
    """Write once; an existing manifest must describe the same experiment."""
    p = Path(path)
    if p.exists():
        old = RunManifest.from_dict(json.loads(p.read_text()))
        if old.identity_hash() != manifest.identity_hash():
            diff = sorted(k for k, v in manifest.identity().items() if old.identity().get(k) != v)
            raise ManifestMismatch(f"{p} describes a different experiment (changed: {', '.join(diff)})")
        roster = {m["model_id"]: m for m in old.models}
        for m in manifest.models:
            if m["model_id"] in roster and roster[m["model_id"]] != m:
                raise ManifestMismatch(f"model {m['model_id']} config changed since {p} was written")
            roster[m["model_id"]] = m
        if len(roster) == len(old.models):
            return
        old.models = [roster[k] for k in sorted(roster)]
        manifest = old
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> RunManifest:
    return RunManifest.from_dict(json.loads(Path(path).read_text()))
