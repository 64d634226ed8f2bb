"""Cross-spectral hallucination: per-channel NIR -> VIS networks and blending."""

from .apply import HallucinatedImage, UntrainedNetWarning, hallucinate, run_net
from .blend import blend, gaussian_kernel, gaussian_smooth
from .color import rgb_to_ycbcr, ycbcr_to_rgb
from .network import (ARCHITECTURES, CHANNELS, AdamState, Architecture, ConvLayer,
                      HallucinationNet, WeightsFileError, adam_step, backward, build_net,
                      euclidean_loss, forward, prelu, prelu_backward)
from .train import EmptyDatasetError, TrainHistory, channel_arrays, train

__all__ = [
    "ARCHITECTURES", "CHANNELS", "AdamState", "Architecture", "ConvLayer", "EmptyDatasetError",
    "HallucinatedImage", "HallucinationNet", "TrainHistory", "UntrainedNetWarning",
    "WeightsFileError", "adam_step", "backward", "blend", "build_net", "channel_arrays",
    "euclidean_loss", "forward", "gaussian_kernel", "gaussian_smooth", "hallucinate", "prelu",
    "prelu_backward", "rgb_to_ycbcr", "run_net", "train", "ycbcr_to_rgb",
]
