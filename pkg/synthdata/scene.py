"""
Scene bundles: one frontal reference plus V ground-truth target views.
"""

from dataclasses import dataclass, field

import numpy as np

from common.errors import ValidationError
from .identity import FRONTAL, CameraPose, IdentityParams
from .render import render_view

MAX_VIEWS = 16


@dataclass(eq=False)
class View:
    image: np.ndarray
    pose: CameraPose


@dataclass(eq=False)
class SceneBundle:
    identity: IdentityParams
    reference: np.ndarray
    targets: list = field(default_factory=list)
    resolution: int = 64

    @property
    def views(self) -> int:
        return len(self.targets)

    @property
    def poses(self) -> list:
        return [t.pose for t in self.targets]

    def validate(self):
        shape = self.reference.shape
        for index, target in enumerate(self.targets):
            if target.image.shape != shape:
                raise ValidationError(
                    f"target {index} has shape {target.image.shape}, reference has {shape}"
                )


def make_bundle(identity: IdentityParams, target_poses: list, resolution: int) -> SceneBundle:
    if not target_poses:
        raise ValidationError("target_poses must contain at least one pose")
    if len(target_poses) > MAX_VIEWS:
        raise ValidationError(f"at most {MAX_VIEWS} target views supported, got {len(target_poses)}")

    reference = render_view(identity, FRONTAL, resolution)
    targets = [View(render_view(identity, pose, resolution), pose) for pose in target_poses]
    bundle = SceneBundle(identity=identity, reference=reference, targets=targets, resolution=resolution)
    bundle.validate()
    return bundle
