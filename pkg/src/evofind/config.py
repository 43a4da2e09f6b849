"""Pipeline configuration.

One versioned, human-readable document carries every constant: alignment
window and threshold, shape scale, score weights, normalization epsilon,
query filters, and the analysis-function exclusion lists.  CLI flags
override file values; the index directory records a hash of the effective
configuration and refuses to load under a different one.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

from .corpus import ANALYSIS_EXCLUDE_NAMES, ANALYSIS_EXCLUDE_PREFIXES
from .errors import InvalidConfig

CONFIG_VERSION = "1"


@dataclass(frozen=True)
class PipelineConfig:
    window: int = 96
    threshold: float = 0.20
    shape_scale: tuple[float, ...] = (1.0, 0.20, 0.20, 1.0, 1.0)
    neighborhood: int = 2
    weight_shape: float = 0.70
    weight_fusion: float = 0.10
    weight_prototype: float = 0.20
    epsilon: float = 1e-6
    min_query_size: int = 16
    min_query_instructions: int = 4
    analysis_exclude_names: tuple[str, ...] = tuple(sorted(ANALYSIS_EXCLUDE_NAMES))
    analysis_exclude_prefixes: tuple[str, ...] = ANALYSIS_EXCLUDE_PREFIXES

    def __post_init__(self):
        if self.window < 1:
            raise InvalidConfig("window must be >= 1")
        if self.threshold <= 0:
            raise InvalidConfig("threshold must be > 0")
        if len(self.shape_scale) != 5 or any(a <= 0 for a in self.shape_scale):
            raise InvalidConfig("shape_scale needs 5 positive components")
        if min(self.weight_shape, self.weight_fusion, self.weight_prototype) < 0:
            raise InvalidConfig("score weights must be >= 0")
        if self.neighborhood < 1:
            raise InvalidConfig("neighborhood must be >= 1")

    def to_dict(self) -> dict:
        return {
            "config_version": CONFIG_VERSION,
            "window": self.window,
            "threshold": self.threshold,
            "shape_scale": list(self.shape_scale),
            "neighborhood": self.neighborhood,
            "weights": {
                "shape": self.weight_shape,
                "fusion": self.weight_fusion,
                "prototype": self.weight_prototype,
            },
            "epsilon": self.epsilon,
            "min_query_size": self.min_query_size,
            "min_query_instructions": self.min_query_instructions,
            "analysis_exclude_names": list(self.analysis_exclude_names),
            "analysis_exclude_prefixes": list(self.analysis_exclude_prefixes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def sha256(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True,
                               separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if doc.get("config_version") != CONFIG_VERSION:
            raise InvalidConfig(
                f"unsupported config_version {doc.get('config_version')!r}")
        weights = doc.get("weights", {})
        try:
            return cls(
                window=int(doc["window"]),
                threshold=float(doc["threshold"]),
                shape_scale=tuple(float(x) for x in doc["shape_scale"]),
                neighborhood=int(doc["neighborhood"]),
                weight_shape=float(weights["shape"]),
                weight_fusion=float(weights["fusion"]),
                weight_prototype=float(weights["prototype"]),
                epsilon=float(doc["epsilon"]),
                min_query_size=int(doc["min_query_size"]),
                min_query_instructions=int(doc["min_query_instructions"]),
                analysis_exclude_names=tuple(doc["analysis_exclude_names"]),
                analysis_exclude_prefixes=tuple(doc["analysis_exclude_prefixes"]),
            )
        except KeyError as exc:
            raise InvalidConfig(f"missing config field {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(json.loads(text))

    def override(self, **kwargs) -> "PipelineConfig":
        """New config with the given fields replaced (None values ignored)."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **updates) if updates else self
