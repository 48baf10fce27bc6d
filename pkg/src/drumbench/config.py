"""One-file workbench configuration with flag overrides.

A config file (TOML or JSON) holds sections for the corpus, codec, cache,
training, and evaluation; dotted key=value overrides are applied on top. The
desk preset trains in minutes on one CPU core; full-scale dimensions are
reachable through the same fields, not a default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .codec import CodecConfig
from .synth import CorpusSpec


@dataclass
class WorkbenchConfig:
    workspace: str = "workspace"
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    codec: CodecConfig = field(default_factory=CodecConfig)
    pca_components: int = 16
    split_fractions: tuple[float, float, float] = (0.78, 0.10, 0.12)
    split_seed: int = 0
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    lambda_ce: float = 0.10
    schedule_steps: int = 50
    train_seed: int = 1234
    eval_seed: int = 1234

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corpus"] = self.corpus.to_dict()
        d["codec"] = self.codec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorkbenchConfig":
        d = dict(d)
        if "corpus" in d:
            d["corpus"] = CorpusSpec.from_dict(d["corpus"])
        if "codec" in d:
            d["codec"] = CodecConfig.from_dict(d["codec"])
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)

    # workspace layout
    @property
    def corpus_dir(self) -> Path:
        return Path(self.workspace) / "corpus"

    @property
    def cache_dir(self) -> Path:
        return Path(self.workspace) / "cache"

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.workspace) / "checkpoints"

    @property
    def eval_dir(self) -> Path:
        return Path(self.workspace) / "eval"

    def checkpoint_path(self, kind: str) -> Path:
        return self.checkpoint_dir / f"{kind}.pt"


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def apply_overrides(config_dict: dict, overrides: list[str]) -> dict:
    """Apply repeated --set section.key=value flags onto the config dict."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        dotted, value = item.split("=", 1)
        target = config_dict
        *path, leaf = dotted.split(".")
        for part in path:
            target = target.setdefault(part, {})
        target[leaf] = _coerce(value)
    return config_dict


def load_config(path=None, overrides: list[str] | None = None) -> WorkbenchConfig:
    merged = WorkbenchConfig().to_dict()
    if path is not None:
        text = Path(path).read_text()
        if str(path).endswith(".toml"):
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
        for key, val in raw.items():
            if isinstance(val, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **val}
            else:
                merged[key] = val
    apply_overrides(merged, overrides or [])
    return WorkbenchConfig.from_dict(merged)
