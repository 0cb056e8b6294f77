"""
Run configuration for command-line invocations.

A run resolves, in order: built-in defaults, the stored config of the
checkpoint it continues from (if any), the --config document, and the
--set overrides. The result is written to resolved_config.json in the
run's output directory together with its hash.
"""

import json
import os
from dataclasses import dataclass, field

from common.errors import ConfigurationError, ValidationError
from common.hashing import hash_config
from training.config import TrainConfig, merge_documents, set_dotted

SNAPSHOT_NAME = "resolved_config.json"


def parse_override(text: str) -> tuple:
    """'a.b=value' -> ('a.b', value); values are JSON literals, else strings."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ValidationError(f"override '{text}' is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_document(path: str) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise ConfigurationError(f"config document {path} does not exist")
    try:
        with open(path, 'r') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"config document {path} is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ValidationError(f"config document {path} must be a JSON object")
    return document


@dataclass
class RunConfig:
    command: str
    config_path: str = None
    overrides: list = field(default_factory=list)
    out: str = "run"
    seed: int = None

    def override_document(self) -> dict:
        document = {}
        for text in self.overrides:
            key, value = parse_override(text)
            set_dotted(document, key, value)
        if self.seed is not None:
            document["seed"] = self.seed
        return document

    def resolve(self, base: dict = None, extra: dict = None) -> TrainConfig:
        """TrainConfig from base < document < extra (flags) < overrides; unknown keys rejected."""
        merged = merge_documents(base or {}, load_document(self.config_path))
        merged = merge_documents(merged, extra or {})
        merged = merge_documents(merged, self.override_document())
        return TrainConfig.from_dict(merged)

    def write_snapshot(self, resolved: TrainConfig, details: dict = None) -> str:
        """Persist document, overrides and the resolved result so the run can be repeated."""
        os.makedirs(self.out, exist_ok=True)
        snapshot = {
            "command": self.command,
            "config_path": self.config_path,
            "document": load_document(self.config_path),
            "overrides": list(self.overrides),
            "seed": self.seed,
            "details": details or {},
            "resolved": resolved.to_dict(),
            "config_hash": hash_config(resolved.to_dict()),
        }
        path = os.path.join(self.out, SNAPSHOT_NAME)
        with open(path, 'w') as f:
            json.dump(snapshot, f, indent=2)
        return path
