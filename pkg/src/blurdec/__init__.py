"""blurdec: coded-exposure photography and learned blur decomposition.

Design asymmetric binary shutter codes, simulate coded motion-blurred
snapshots from high-frame-rate video, and train an implicit-neural video
network that extracts the sharp frame sequence back out of one snapshot.
"""

from .codes import (
    EmptySearchError,
    ExposureCode,
    SpectrumScore,
    dft_magnitude_spectrum,
    is_symmetric,
    search_codes,
)
from .forward import (
    CodedSnapshot,
    FrameStack,
    ZeroThroughputError,
    add_noise,
    coded_average,
    normalized_times,
    reblur,
    synthesize_coded_blur,
    toy_translation_scene,
)
from .losses import LossReport, LossWeights, psnr, ssim_metric, total_loss
from .network import BlurDecomposer, NetworkConfig, SelectiveModeError, position_encode
from .engine import (
    TrainConfig,
    TrainingDiverged,
    evaluate,
    load_checkpoint,
    lr_schedule,
    model_from_checkpoint,
    sweep,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BlurDecomposer",
    "CodedSnapshot",
    "EmptySearchError",
    "ExposureCode",
    "FrameStack",
    "LossReport",
    "LossWeights",
    "NetworkConfig",
    "SelectiveModeError",
    "SpectrumScore",
    "TrainConfig",
    "TrainingDiverged",
    "ZeroThroughputError",
    "add_noise",
    "coded_average",
    "dft_magnitude_spectrum",
    "evaluate",
    "is_symmetric",
    "load_checkpoint",
    "lr_schedule",
    "model_from_checkpoint",
    "normalized_times",
    "position_encode",
    "psnr",
    "reblur",
    "search_codes",
    "ssim_metric",
    "sweep",
    "synthesize_coded_blur",
    "total_loss",
    "toy_translation_scene",
    "train",
]
