"""Layer-wise local Hessians of feed-forward networks and their spectral diagnostics."""
from .local_hessian import (LocalHessian, NeuronBlockHessian, hessian_closed_form, hessian_fd,
                            hessian_neuron_blocks, hessian_rowwise)
from .network import Activation, FunctionalBlock, Network
from .spectral import HessianSpectrum, SpectralSummary, hessian_spectrum

__version__ = "0.1.0"

__all__ = [
    "Activation", "FunctionalBlock", "Network", "LocalHessian", "NeuronBlockHessian",
    "hessian_rowwise", "hessian_neuron_blocks", "hessian_closed_form", "hessian_fd",
    "HessianSpectrum", "SpectralSummary", "hessian_spectrum",
]
