"""
Evaluation reports: one JSON document plus one flat CSV per table.
"""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

from common.errors import ValidationError

PROXY_NOTE = (
    "lpips_proxy uses codec-encoder features, id_proxy and fid_proxy use the synthetic "
    "identity embedder; these are desk-scale proxies, not LPIPS/ArcFace/Inception values"
)


@dataclass
class EvalReport:
    kind: str
    summary: dict = field(default_factory=dict)
    per_view: list = field(default_factory=list)
    per_angle: list = field(default_factory=list)
    per_noise: list = field(default_factory=list)
    per_regime: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    config_hash: str = ""
    note: str = PROXY_NOTE

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        """Every numeric entry must be finite."""
        def walk(value, path):
            if isinstance(value, dict):
                for key, item in value.items():
                    walk(item, f"{path}.{key}")
            elif isinstance(value, list):
                for index, item in enumerate(value):
                    walk(item, f"{path}[{index}]")
            elif isinstance(value, float) and not math.isfinite(value):
                raise ValidationError(f"report entry {path} is not finite: {value}")
        walk(self.to_dict(), self.kind)

    def tables(self) -> dict:
        return {
            name: rows for name, rows in (
                ("per_view", self.per_view),
                ("per_angle", self.per_angle),
                ("per_noise", self.per_noise),
            ) if rows
        }

    def write(self, directory: str) -> list:
        """Write <kind>.json and <kind>_<table>.csv files; returns their paths."""
        self.validate()
        os.makedirs(directory, exist_ok=True)
        paths = []
        json_path = os.path.join(directory, f"{self.kind}.json")
        with open(json_path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)
        paths.append(json_path)
        for name, rows in self.tables().items():
            path = os.path.join(directory, f"{self.kind}_{name}.csv")
            write_csv(path, rows)
            paths.append(path)
        return paths


def write_csv(path: str, rows: list):
    columns = list(rows[0].keys())
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path: str) -> list:
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))
