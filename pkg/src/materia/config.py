"""Declarative project configuration (TOML with table sections)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .corpus import SegmentationPolicy
from .gateway import GatewayPolicy


@dataclass
class ProjectConfig:
    corpus_dir: Path = Path("corpus")
    templates_dir: Path | None = None
    providers_file: Path | None = None
    taxonomy_file: Path | None = None
    store_path: Path = Path("reviews.db")
    output_dir: Path = Path("out")
    segmentation: SegmentationPolicy = field(default_factory=SegmentationPolicy)
    gateway: GatewayPolicy = field(default_factory=GatewayPolicy)


def load_config(path: str | Path) -> ProjectConfig:
    """Parse a project config; relative paths resolve against the file's directory."""
    config_path = Path(path)
    with config_path.open("rb") as fh:
        raw = tomli.load(fh)
    base = config_path.parent

    def _resolve(value: str | None) -> Path | None:
        if value is None:
            return None
        candidate = Path(value)
        return candidate if candidate.is_absolute() else base / candidate

    project = raw.get("project", {})
    segmentation = raw.get("segmentation", {})
    gateway = raw.get("gateway", {})
    return ProjectConfig(
        corpus_dir=_resolve(project.get("corpus_dir", "corpus")),
        templates_dir=_resolve(project.get("templates_dir")),
        providers_file=_resolve(project.get("providers_file")),
        taxonomy_file=_resolve(project.get("taxonomy_file")),
        store_path=_resolve(project.get("store_path", "reviews.db")),
        output_dir=_resolve(project.get("output_dir", "out")),
        segmentation=SegmentationPolicy(
            max_chars=int(segmentation.get("max_chars", 3000)),
            overlap_chars=int(segmentation.get("overlap_chars", 200)),
            boundary_rule=segmentation.get("boundary_rule", "prefer_paragraph_end"),
        ),
        gateway=GatewayPolicy(
            max_concurrent=int(gateway.get("max_concurrent", 4)),
            requests_per_minute=int(gateway.get("requests_per_minute", 60)),
            max_retries=int(gateway.get("max_retries", 3)),
            backoff_base_ms=int(gateway.get("backoff_base_ms", 250)),
            request_timeout_s=float(gateway.get("request_timeout_s", 60.0)),
        ),
    )
