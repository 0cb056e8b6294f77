"""
Synthetic identities and camera poses.

An identity is a pure function of its seed (and regime): geometry and
palette vectors in [0, 1] plus procedural texture frequencies.
"""

from dataclasses import dataclass

import numpy as np

from common.errors import ValidationError

GEOMETRY_FIELDS = (
    "head_width",
    "head_height",
    "eye_spacing",
    "nose_length",
    "hair_extent",
    "mouth_width",
    "eye_size",
)
PALETTE_FIELDS = (
    "skin_r", "skin_g", "skin_b",
    "hair_r", "hair_g", "hair_b",
    "eye_r", "eye_g", "eye_b",
)
TEXTURE_FIELDS = ("skin_freq", "hair_freq")

YAW_RANGE = (-90.0, 90.0)
PITCH_RANGE = (-20.0, 20.0)
TRAIN_YAW_RANGE = (-60.0, 60.0)
TRAIN_PITCH_RANGE = (-10.0, 10.0)


@dataclass(frozen=True)
class Regime:
    """Identity distribution: geometry sub-range and texture frequency scale."""
    name: str
    geometry_low: float
    geometry_high: float
    texture_scale: float


REGIMES = {
    "pretrain": Regime("pretrain", 0.0, 1.0, 1.0),
    # Narrower faces, finer textures: stands in for the real-capture domain.
    "finetune": Regime("finetune", 0.3, 0.7, 2.0),
}


@dataclass(eq=False)
class IdentityParams:
    seed: int
    geometry: np.ndarray
    palette: np.ndarray
    texture_freqs: np.ndarray
    regime: str = "pretrain"

    def get(self, name: str) -> float:
        """Look up a named geometry entry."""
        return float(self.geometry[GEOMETRY_FIELDS.index(name)])

    def color(self, part: str) -> np.ndarray:
        offset = {"skin": 0, "hair": 3, "eye": 6}[part]
        return self.palette[offset:offset + 3]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "regime": self.regime,
            "geometry": self.geometry.tolist(),
            "palette": self.palette.tolist(),
            "texture_freqs": self.texture_freqs.tolist(),
        }

    def equals(self, other: "IdentityParams") -> bool:
        return (
            self.seed == other.seed
            and self.regime == other.regime
            and np.array_equal(self.geometry, other.geometry)
            and np.array_equal(self.palette, other.palette)
            and np.array_equal(self.texture_freqs, other.texture_freqs)
        )


@dataclass(frozen=True)
class CameraPose:
    yaw: float = 0.0
    pitch: float = 0.0
    distance: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not YAW_RANGE[0] <= self.yaw <= YAW_RANGE[1]:
            raise ValidationError(f"yaw {self.yaw} outside [{YAW_RANGE[0]}, {YAW_RANGE[1]}]")
        if not PITCH_RANGE[0] <= self.pitch <= PITCH_RANGE[1]:
            raise ValidationError(f"pitch {self.pitch} outside [{PITCH_RANGE[0]}, {PITCH_RANGE[1]}]")
        if not self.distance > 0:
            raise ValidationError(f"distance must be > 0, got {self.distance}")

    def to_dict(self) -> dict:
        return {"yaw": self.yaw, "pitch": self.pitch, "distance": self.distance}

    @classmethod
    def from_dict(cls, data: dict) -> "CameraPose":
        return cls(
            yaw=float(data["yaw"]),
            pitch=float(data.get("pitch", 0.0)),
            distance=float(data.get("distance", 1.0)),
        )


FRONTAL = CameraPose(0.0, 0.0, 1.0)


def sample_identity(seed: int, regime: str = "pretrain") -> IdentityParams:
    """
    Draw an identity from its seed.
    The same seed yields the same uniforms in every regime; the regime only
    changes how they are mapped onto geometry and texture ranges.
    """
    if seed < 0:
        raise ValidationError(f"seed must be >= 0, got {seed}")
    if regime not in REGIMES:
        raise ValidationError(f"unknown regime '{regime}', expected one of {sorted(REGIMES)}")
    params = REGIMES[regime]

    rng = np.random.default_rng(seed)
    unit_geometry = rng.random(len(GEOMETRY_FIELDS))
    palette = rng.random(len(PALETTE_FIELDS))
    unit_texture = rng.random(len(TEXTURE_FIELDS))

    geometry = params.geometry_low + (params.geometry_high - params.geometry_low) * unit_geometry
    # skin in [2, 6] cycles, hair strands in [6, 14] cycles per image
    texture = np.array([
        2.0 + 4.0 * unit_texture[0],
        6.0 + 8.0 * unit_texture[1],
    ]) * params.texture_scale

    return IdentityParams(
        seed=int(seed),
        geometry=np.clip(geometry, 0.0, 1.0),
        palette=np.clip(palette, 0.0, 1.0),
        texture_freqs=texture,
        regime=regime,
    )


def sample_training_poses(rng: np.random.Generator, count: int) -> list:
    """Uniform yaw in [-60, 60] and pitch in [-10, 10] degrees."""
    yaws = rng.uniform(TRAIN_YAW_RANGE[0], TRAIN_YAW_RANGE[1], size=count)
    pitches = rng.uniform(TRAIN_PITCH_RANGE[0], TRAIN_PITCH_RANGE[1], size=count)
    return [CameraPose(float(y), float(p), 1.0) for y, p in zip(yaws, pitches)]


def split_seeds(n_train: int, n_eval: int, first_seed: int = 0, eval_offset: int = 100000) -> tuple:
    """
    Identity-disjoint train/eval seed lists.
    Eval seeds start at first_seed + eval_offset so growing the train split never collides.
    """
    if n_train > eval_offset:
        raise ValidationError(f"n_train {n_train} exceeds eval offset {eval_offset}")
    train = list(range(first_seed, first_seed + n_train))
    evaluation = list(range(first_seed + eval_offset, first_seed + eval_offset + n_eval))
    return train, evaluation
