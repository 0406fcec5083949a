"""Wavelet channel attention network for single image deraining."""

from .network import DerainNet, NetConfig, derain, forward, init_params
from .tensor import Tensor
from .wavelet import dwt2d, idwt2d

__all__ = ["DerainNet", "NetConfig", "Tensor", "derain", "dwt2d", "forward", "idwt2d", "init_params"]
__version__ = "0.1.0"
