# training/__init__.py
from .config import TrainConfig, LossWeights
from .losses import LossReport, generator_loss, discriminator_loss
from .checkpoint import CheckpointManifest, load_manifest, latest_checkpoint
from .train_log import TrainLog
from .codec_trainer import train_codec
from .trainer import StageData, Trainer, pretrain_base, train_base, train_stage, resume
from .gradcheck import finite_difference_check

__all__ = [
    'TrainConfig', 'LossWeights',
    'LossReport', 'generator_loss', 'discriminator_loss',
    'CheckpointManifest', 'load_manifest', 'latest_checkpoint',
    'TrainLog',
    'train_codec',
    'StageData', 'Trainer', 'pretrain_base', 'train_base', 'train_stage', 'resume',
    'finite_difference_check',
]
