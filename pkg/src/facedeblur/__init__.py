"""One-step blind face deblurring at desk scale."""

from .imaging import Image, blur, load_png, psnr, save_png
from .kernels import GpConfig, MotionKernel, linear_kernel, synth_kernel
from .losses import LossWeights, proxy_extractor, total_loss
from .model import DeepDeblurNet, IdentityNet, NetworkConfig, parameter_count
from .tensor import Tape, Tensor, backward
from .training import TrainConfig, train

__all__ = [
    "DeepDeblurNet", "GpConfig", "IdentityNet", "Image", "LossWeights", "MotionKernel",
    "NetworkConfig", "Tape", "Tensor", "TrainConfig", "backward", "blur", "linear_kernel",
    "load_png", "parameter_count", "proxy_extractor", "psnr", "save_png", "synth_kernel",
    "total_loss", "train",
]
