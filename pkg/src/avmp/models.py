"""Model memory specs: layer mix and per-pool sizing parameters.

Specs are data, not code constants; the shipped config files carry the two
default desk-scale models and the loader accepts any file with the same
schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from avmp.errors import ConfigError

DEFAULT_ATTENTION_PAGE_TOKENS = 16


@dataclass(frozen=True)
class ModelSpec:
    """Memory-relevant shape of one served model."""

    name: str
    attention_layers: int
    ssm_layers: int
    per_token_bytes: int       # aggregate KV bytes per token across attention layers
    ssm_block_bytes: int       # per-layer state bytes (state_dim * bytes_per_element)
    attention_page_tokens: int = DEFAULT_ATTENTION_PAGE_TOKENS

    def __post_init__(self):
        if self.attention_layers < 1 or self.ssm_layers < 1:
            raise ConfigError(f"{self.name}: layer counts must be >= 1")
        if min(self.per_token_bytes, self.ssm_block_bytes,
               self.attention_page_tokens) <= 0:
            raise ConfigError(f"{self.name}: byte sizes and page tokens must be positive")

    @property
    def kv_page_bytes(self) -> int:
        return self.attention_page_tokens * self.per_token_bytes

    def kv_pages_for(self, tokens: int) -> int:
        """Pages needed to hold a sequence of the given token count."""
        return -(-tokens // self.attention_page_tokens)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        try:
            return cls(
                name=data["name"],
                attention_layers=int(data["attention_layers"]),
                ssm_layers=int(data["ssm_layers"]),
                per_token_bytes=int(data["per_token_bytes"]),
                ssm_block_bytes=int(data["ssm_block_bytes"]),
                attention_page_tokens=int(
                    data.get("attention_page_tokens", DEFAULT_ATTENTION_PAGE_TOKENS)),
            )
        except KeyError as missing:
            raise ConfigError(f"model spec missing field {missing}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "attention_layers": self.attention_layers,
            "ssm_layers": self.ssm_layers,
            "per_token_bytes": self.per_token_bytes,
            "ssm_block_bytes": self.ssm_block_bytes,
            "attention_page_tokens": self.attention_page_tokens,
        }


def load_model_specs(path: str | Path) -> dict[str, ModelSpec]:
    """Read a JSON file of model specs keyed by name."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model spec file {path}: {exc}") from exc
    specs = {}
    for entry in raw.get("models", []):
        spec = ModelSpec.from_dict(entry)
        specs[spec.name] = spec
    if not specs:
        raise ConfigError(f"no models defined in {path}")
    return specs


# Desk-scale defaults, also shipped as configs/models.json.
JAMBA_1_5_MINI = ModelSpec(
    name="jamba_1_5_mini",
    attention_layers=4,
    ssm_layers=28,
    per_token_bytes=4096,
    ssm_block_bytes=10240,
)

MAMBA2_1B3 = ModelSpec(
    name="mamba2_1b3",
    attention_layers=1,
    ssm_layers=48,
    per_token_bytes=1024,
    ssm_block_bytes=16384,
)

BUILTIN_MODELS = {spec.name: spec for spec in (JAMBA_1_5_MINI, MAMBA2_1B3)}
