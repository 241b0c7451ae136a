"""Pipeline configuration: plain-text key=value files, flag overrides, hashing.

Every field has a default. Unknown keys are rejected by name. Environment
variables are never consulted; only the file and explicit overrides count, so
a run is fully described by its config hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    # inputs
    classes_path: str = ""
    dataset_path: str = ""
    test_path: str = ""
    support_path: str = ""
    pairs_path: str = ""
    # artifact locations
    cache_dir: str = "cache"
    run_dir: str = "run"
    be_dir: str = ""
    ce_dir: str = ""
    # knowledge bases
    related_words_url: str = "https://relatedwords.org/api/related"
    reverse_dictionary_url: str = "https://reversedictionary.org/api/related"
    kb_max_attempts: int = 3
    kb_backoff: float = 0.5
    kb_timeout: float = 10.0
    kb_max_in_flight: int = 2
    kb_min_interval: float = 0.2
    # filtering and calibration
    mu_be: float = 0.5
    mu_ce: float = 0.1
    ce_keep_below: bool = True
    calibration_cut: float = 0.5
    # prompt and evaluation protocol
    template: str = "study"
    shots: tuple[int, ...] = (1, 5, 10, 20, 50)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    support_size: int = 200
    zero_shot: bool = False
    # model tuning
    epochs: int = 5
    learning_rate: float = 3e-5
    batch_size: int = 5
    max_length: int = 256
    aggregation: str = "mean"
    use_semantic_scores: bool = True
    use_calibration: bool = True
    use_filtering: bool = True
    soft: bool = False
    freeze_backend: bool = False
    # masked-LM backend
    backend: str = "tiny"
    backend_model: str = ""
    backend_dim: int = 32
    backend_hidden: int = 64
    backend_seed: int = 0
    # NLI encoders
    encoder_dim: int = 32
    encoder_hidden: int = 64
    encoder_epochs: int = 5
    encoder_lr: float = 3e-5
    encoder_batch: int = 5
    encoder_seed: int = 0

    def hash(self) -> str:
        """Stable under key reordering: canonical sorted serialization."""
        doc = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"key {key!r}: cannot read {raw!r} as a boolean")


def _parse_int_tuple(raw: str, key: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in str(raw).split(",") if part.strip())
    except ValueError as e:
        raise ConfigError(f"key {key!r}: {e}") from e
    if not values:
        raise ConfigError(f"key {key!r}: needs at least one integer")
    return values


def _coerce(key: str, value) -> object:
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    if isinstance(value, str):
        raw = value.strip()
        if kind == "bool":
            return _parse_bool(raw, key)
        if kind == "int":
            try:
                return int(raw)
            except ValueError as e:
                raise ConfigError(f"key {key!r}: {e}") from e
        if kind == "float":
            try:
                return float(raw)
            except ValueError as e:
                raise ConfigError(f"key {key!r}: {e}") from e
        if kind == "tuple[int, ...]":
            return _parse_int_tuple(raw, key)
        return raw
    if kind == "tuple[int, ...]":
        return tuple(int(x) for x in value)
    if kind == "bool" and isinstance(value, bool):
        return value
    if kind == "int" and isinstance(value, (int, float)):
        return int(value)
    if kind == "float" and isinstance(value, (int, float)):
        return float(value)
    if kind == "str":
        return str(value)
    return value


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """key = value lines; blank lines and # comments are ignored."""
    values: dict[str, object] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{line_no}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.split("#", 1)[0].strip()
        values[key] = _coerce(key, raw)
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """File values first, explicit overrides on top, defaults underneath."""
    values: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), origin=str(p)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = _coerce(key, value)
    return PipelineConfig(**values)


def dump_config(config: PipelineConfig) -> str:
    lines = []
    for key, value in sorted(asdict(config).items()):
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
