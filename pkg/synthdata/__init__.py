# synthdata/__init__.py
from .identity import CameraPose, IdentityParams, sample_identity, sample_training_poses, split_seeds
from .render import render_view, feature_layout
from .scene import SceneBundle, View, make_bundle
from .coarse import CoarseView, DegradationConfig, degrade, degrade_bundle
from .dataset import Manifest, generate_bundles, read_dataset, write_dataset, load_manifest, regenerate_dataset

__all__ = [
    'CameraPose', 'IdentityParams', 'sample_identity', 'sample_training_poses', 'split_seeds',
    'render_view', 'feature_layout',
    'SceneBundle', 'View', 'make_bundle',
    'CoarseView', 'DegradationConfig', 'degrade', 'degrade_bundle',
    'Manifest', 'generate_bundles', 'read_dataset', 'write_dataset', 'load_manifest', 'regenerate_dataset',
]
