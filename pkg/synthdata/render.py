"""
Analytic 2D-parametric head renderer.

Facial features live on the head surface at an azimuth phi (0 = front).
Under yaw they move along the arc x = cx + Rx * sin(phi + yaw), shrink
horizontally with cos(phi + yaw) and fade out once they turn away, so the
far-side features vanish at large yaw. Skin and hair regions and both
procedural textures are defined in surface coordinates, which keeps
every view of an identity consistent with every other view.
"""

from dataclasses import dataclass

import numpy as np

from common.errors import ValidationError
from common.images import SUPPORTED_RESOLUTIONS, quantize
from .identity import CameraPose, IdentityParams

BACKGROUND = np.array([0.18, 0.20, 0.24])
MOUTH_TINT = np.array([0.70, 0.22, 0.26])

# Mirror pairs under yaw -> -yaw.
MIRROR = {
    "left_eye": "right_eye",
    "right_eye": "left_eye",
    "nose": "nose",
    "mouth": "mouth",
}


@dataclass(frozen=True)
class FeaturePlacement:
    x: float
    y: float
    half_w: float
    half_h: float
    visibility: float


@dataclass(frozen=True)
class HeadFrame:
    cx: float
    cy: float
    rx: float
    ry: float
    yaw: float          # radians
    lift: float         # vertical pitch offset in units of ry


def _smoothstep(x, low, high):
    t = np.clip((x - low) / (high - low), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _validate(pose: CameraPose, resolution: int):
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ValidationError(f"resolution must be one of {SUPPORTED_RESOLUTIONS}, got {resolution}")
    pose.validate()


def head_frame(identity: IdentityParams, pose: CameraPose, resolution: int) -> HeadFrame:
    scale = (resolution / 2.0) / pose.distance
    center = (resolution - 1) / 2.0
    return HeadFrame(
        cx=center,
        cy=center + 0.06 * scale,
        rx=scale * (0.48 + 0.14 * identity.get("head_width")),
        ry=scale * (0.60 + 0.14 * identity.get("head_height")),
        yaw=np.radians(pose.yaw),
        lift=0.6 * np.sin(np.radians(pose.pitch)),
    )


def _surface_features(identity: IdentityParams) -> dict:
    """(azimuth radians, vertical position in ry units, half_w in rx units, half_h in ry units)."""
    eye_phi = np.radians(15.0 + 15.0 * identity.get("eye_spacing"))
    eye_w = 0.09 + 0.05 * identity.get("eye_size")
    nose_len = identity.get("nose_length")
    return {
        "left_eye": (-eye_phi, -0.15, eye_w, 0.55 * eye_w),
        "right_eye": (eye_phi, -0.15, eye_w, 0.55 * eye_w),
        "nose": (0.0, 0.05 + 0.10 * nose_len, 0.07, 0.10 + 0.08 * nose_len),
        "mouth": (0.0, 0.45, 0.15 + 0.12 * identity.get("mouth_width"), 0.05),
    }


def feature_layout(identity: IdentityParams, pose: CameraPose, resolution: int) -> dict:
    """Projected placement of every facial feature, in pixels."""
    _validate(pose, resolution)
    frame = head_frame(identity, pose, resolution)
    layout = {}
    for name, (phi, v, half_w, half_h) in _surface_features(identity).items():
        facing = np.cos(phi + frame.yaw)
        layout[name] = FeaturePlacement(
            x=float(frame.cx + frame.rx * np.sin(phi + frame.yaw)),
            y=float(frame.cy + frame.ry * (v + frame.lift)),
            half_w=float(frame.rx * half_w * max(facing, 0.0)),
            half_h=float(frame.ry * half_h),
            visibility=float(_smoothstep(facing, 0.05, 0.35)),
        )
    return layout


def _ellipse_alpha(xs, ys, placement: FeaturePlacement):
    """Anti-aliased ellipse coverage with a one-pixel soft edge."""
    if placement.visibility <= 0.0 or placement.half_w <= 1e-6:
        return np.zeros_like(xs)
    u = (xs - placement.x) / placement.half_w
    v = (ys - placement.y) / placement.half_h
    radius = np.sqrt(u * u + v * v)
    edge = (radius - 1.0) * min(placement.half_w, placement.half_h)
    return np.clip(0.5 - edge, 0.0, 1.0) * placement.visibility


def render_view(identity: IdentityParams, pose: CameraPose, resolution: int) -> np.ndarray:
    """Render one view as a (3, H, W) float32 image on the 8-bit grid."""
    _validate(pose, resolution)
    frame = head_frame(identity, pose, resolution)
    ys, xs = np.mgrid[0:resolution, 0:resolution].astype(np.float64)

    u = (xs - frame.cx) / frame.rx
    w = (ys - frame.cy) / frame.ry
    radius = np.sqrt(u * u + w * w)
    head_alpha = np.clip(0.5 - (radius - 1.0) * min(frame.rx, frame.ry), 0.0, 1.0)

    # Azimuth of the visible surface point, in the head's own frame.
    slice_half = np.sqrt(np.clip(1.0 - w * w, 1e-6, None))
    phi = np.arcsin(np.clip(u / slice_half, -1.0, 1.0)) - frame.yaw

    hair_extent = identity.get("hair_extent")
    face_half = np.radians(78.0 - 22.0 * hair_extent)
    hairline = -0.35 - 0.30 * (1.0 - hair_extent) + frame.lift
    side_px = frame.rx * np.radians(3.0)
    face = (
        np.clip(0.5 - (np.abs(phi) - face_half) * frame.rx / side_px, 0.0, 1.0)
        * np.clip(0.5 + (w - hairline) * frame.ry, 0.0, 1.0)
    )

    # Hair volume above and behind the skull.
    vol_u = u / 1.08
    vol_w = (w + 0.06) / (1.02 + 0.12 * hair_extent)
    vol_radius = np.sqrt(vol_u * vol_u + vol_w * vol_w)
    volume_alpha = np.clip(0.5 - (vol_radius - 1.0) * min(frame.rx, frame.ry), 0.0, 1.0)
    volume_alpha *= np.clip(0.5 - (w - 0.15) * frame.ry, 0.0, 1.0)

    arc = frame.rx * phi / resolution          # surface arclength in image widths
    skin_freq, hair_freq = identity.texture_freqs
    skin_tex = 0.92 + 0.08 * np.sin(2 * np.pi * skin_freq * arc) * np.cos(np.pi * skin_freq * w * frame.ry / resolution)
    hair_tex = 0.72 + 0.28 * np.sin(2 * np.pi * hair_freq * arc + 3.0 * w) ** 2
    shading = 0.78 + 0.22 * np.sqrt(np.clip(1.0 - u * u - w * w, 0.0, None))

    skin = identity.color("skin")[:, None, None] * (skin_tex * shading)[None]
    hair = identity.color("hair")[:, None, None] * (hair_tex * shading)[None]
    head = face[None] * skin + (1.0 - face[None]) * hair

    image = np.broadcast_to(BACKGROUND[:, None, None], (3, resolution, resolution)).copy()
    image = image * (1.0 - volume_alpha[None]) + hair * volume_alpha[None]
    image = image * (1.0 - head_alpha[None]) + head * head_alpha[None]

    layout = feature_layout(identity, pose, resolution)
    colors = {
        "left_eye": 0.55 * identity.color("eye"),
        "right_eye": 0.55 * identity.color("eye"),
        "nose": 0.78 * identity.color("skin"),
        "mouth": 0.3 * identity.color("skin") + 0.7 * MOUTH_TINT,
    }
    for name, placement in layout.items():
        alpha = (_ellipse_alpha(xs, ys, placement) * head_alpha)[None]
        image = image * (1.0 - alpha) + colors[name][:, None, None] * alpha

    return quantize(image)
