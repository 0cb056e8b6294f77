# models/__init__.py
from .codec import LatentCodec, CodecCheckpoint, save_codec, load_codec
from .layout import ViewLatentBatch, reshape_for_resblock, reshape_for_attention
from .noise import NoiseLevel, add_noise, sample_train_noise_level, TRAIN_NOISE_LEVELS
from .lora import LoRAAdapter, apply_lora, merge_lora
from .refiner import RefinerConfig, RefinerModel, refine, refine_batch, unet_forward, save_refiner, load_refiner
from .discriminator import PatchDiscriminator, disc_forward

__all__ = [
    'LatentCodec', 'CodecCheckpoint', 'save_codec', 'load_codec',
    'ViewLatentBatch', 'reshape_for_resblock', 'reshape_for_attention',
    'NoiseLevel', 'add_noise', 'sample_train_noise_level', 'TRAIN_NOISE_LEVELS',
    'LoRAAdapter', 'apply_lora', 'merge_lora',
    'RefinerConfig', 'RefinerModel', 'refine', 'refine_batch', 'unet_forward', 'save_refiner', 'load_refiner',
    'PatchDiscriminator', 'disc_forward',
]
