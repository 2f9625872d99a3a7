"""Wavelet sub-band morph detection with group-sparse channel selection."""
from . import convnet, dataio, explain, metrics, sparsity, trainer, wavelet
from ._kernels import backend as kernel_backend

__version__ = "0.1.0"

__all__ = ["convnet", "dataio", "explain", "metrics", "sparsity", "trainer", "wavelet", "kernel_backend"]
