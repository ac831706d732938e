"""Configuration management for Veraz."""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, cast

from .errors import ConfigError


EncoderChoice = Literal["lexicon", "precomputed"]
DataFormat = Literal["jsonl", "csv"]
Pooling = Literal["attention", "last"]
RejectPolicy = Literal["drop", "defer"]


def _get_env(key: str, default: Optional[str] = None) -> Optional[str]:
    """Read an environment variable."""
    return os.getenv(key, default)


def _get_env_or_default(key: str, default: str) -> str:
    """Return a string env var ensured to never be None."""
    value = _get_env(key, default)
    return default if value is None else value


class VerazConfig:
    """Global configuration for the Veraz package."""

    def __init__(self):
        # Load from environment variables
        self.log_level: str = _get_env_or_default("VERAZ_LOG_LEVEL", "INFO")
        self.output_dir: Path = Path(_get_env_or_default("VERAZ_OUTPUT_DIR", "runs")).expanduser()
        self.seed: int = int(_get_env_or_default("VERAZ_SEED", "0"))
        self.lexicon_dir: Optional[Path] = self._get_lexicon_dir()

    def _get_lexicon_dir(self) -> Optional[Path]:
        """Get lexicon directory from environment or None for the bundled lists."""
        lexicon_dir_env = _get_env("VERAZ_LEXICON_DIR")
        if lexicon_dir_env:
            return Path(lexicon_dir_env).expanduser()
        return None

    def load_from_env_file(self, env_file: Path) -> None:
        """Load configuration from .env file."""
        if not env_file.exists():
            return

        with open(env_file, 'r', encoding='utf-8') as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith('#'):
                    continue

                if '=' in line:
                    key, value = line.split('=', 1)
                    os.environ[key.strip()] = value.strip()

        # Reload configuration
        self.__init__()


# Global configuration instance
config = VerazConfig()


def load_config(env_file: str = ".env") -> None:
    """Load configuration from environment file.

    Args:
        env_file: Path to .env file (default: .env)
    """
    config.load_from_env_file(Path(env_file))


@dataclass
class RunConfig:
    """Everything needed to reproduce one command invocation.

    Stored as JSON with exactly these fields; command-line flags override
    values read from a file.
    """

    data_path: str = "data/synthetic_fnn.jsonl"
    data_format: Optional[DataFormat] = None
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = field(default_factory=lambda: config.seed)
    k: int = 5
    sigma: float = 0.95
    reject_policy: RejectPolicy = "drop"
    epochs_per_round: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    embed_dim: int = 64
    hidden_dim: int = 64
    dense_dim: int = 32
    max_seq_len: int = 100
    pooling: Pooling = "attention"
    min_frequency: int = 2
    max_vocab_size: int = 20000
    encoder: EncoderChoice = "lexicon"
    sidecar_path: Optional[str] = None
    use_sentiment: bool = True
    device_features: bool = False
    output_dir: str = field(default_factory=lambda: str(config.output_dir))

    @classmethod
    def from_file(cls, path: Path) -> "RunConfig":
        """Read a JSON config file."""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}")

        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")

        return cls().merged(data)

    def merged(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Return a copy with non-None overrides applied."""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"Unknown config fields: {', '.join(unknown)}")

        values = asdict(self)
        for key, value in overrides.items():
            if value is not None:
                values[key] = value
        values["ratios"] = tuple(float(r) for r in values["ratios"])
        return RunConfig(**values)

    def validate(self, require_data: bool = True) -> None:
        """Check paths and numeric ranges."""
        errors: List[str] = []

        if require_data and not Path(self.data_path).exists():
            errors.append(f"data_path does not exist: {self.data_path}")
        if self.data_format not in (None, "jsonl", "csv"):
            errors.append(f"data_format must be jsonl or csv, got {self.data_format}")
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            errors.append(f"ratios must be three positive numbers, got {self.ratios}")
        elif abs(sum(self.ratios) - 1.0) > 1e-9:
            errors.append(f"ratios must sum to 1, got {sum(self.ratios)}")
        if self.k < 2:
            errors.append(f"k must be at least 2, got {self.k}")
        if not 0.5 < self.sigma < 1.0:
            errors.append(f"sigma must lie in (0.5, 1), got {self.sigma}")
        if self.reject_policy not in ("drop", "defer"):
            errors.append(f"reject_policy must be drop or defer, got {self.reject_policy}")
        if self.pooling not in ("attention", "last"):
            errors.append(f"pooling must be attention or last, got {self.pooling}")
        if self.learning_rate <= 0:
            errors.append(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("epochs_per_round", "batch_size", "embed_dim", "hidden_dim",
                     "dense_dim", "max_seq_len", "min_frequency"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.max_vocab_size < 3:
            errors.append(f"max_vocab_size must be at least 3, got {self.max_vocab_size}")
        if self.encoder not in ("lexicon", "precomputed"):
            errors.append(f"encoder must be lexicon or precomputed, got {self.encoder}")
        if self.encoder == "precomputed":
            if not self.sidecar_path:
                errors.append("encoder 'precomputed' needs sidecar_path")
            elif not Path(self.sidecar_path).exists():
                errors.append(f"sidecar_path does not exist: {self.sidecar_path}")

        if errors:
            raise ConfigError("; ".join(errors))

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization."""
        data = asdict(self)
        data["ratios"] = list(self.ratios)
        return data

    @property
    def format(self) -> DataFormat:
        """Corpus format, inferred from the file suffix when not set."""
        if self.data_format:
            return self.data_format
        return cast(DataFormat, "csv" if self.data_path.lower().endswith(".csv") else "jsonl")
