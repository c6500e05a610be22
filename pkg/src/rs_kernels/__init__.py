"""Range-separated low-rank tensor representations of Green kernels on 3D grids."""

from ._kernels import backend
from .canonical import (CanonicalTensor3, CompressionError, GridSpec, TuckerTensor3,
                        compress_can_tuck_can, project_kernel, reference_tensor, shift_window)
from .elliptic import (GridField, PbeConfig, modified_rhs, pbe_regularize_rhs, regularized_poisson,
                       short_convolve, solve_poisson_dirichlet)
from .operators import DiscreteDelta, apply_laplacian, build_delta, multiparticle_delta
from .oracles import AnalyticKernel, erf_potential, erf_potential_gradient, g_d, green_eval
from .quadrature import (QuadratureRule, RadialKernel, build_sinc_rule, inverse_power, newton,
                         yukawa)
from .range_separation import (ParticleSystem, RsCanonicalTensor, RsSplit, assemble_multiparticle,
                               choose_split, split_kernel, split_tensor)

__version__ = "0.1.0"

__all__ = [
    "AnalyticKernel", "CanonicalTensor3", "CompressionError", "DiscreteDelta", "GridField",
    "GridSpec", "ParticleSystem", "PbeConfig", "QuadratureRule", "RadialKernel",
    "RsCanonicalTensor", "RsSplit", "TuckerTensor3", "apply_laplacian", "assemble_multiparticle",
    "backend", "build_delta", "build_sinc_rule", "choose_split", "compress_can_tuck_can",
    "erf_potential", "erf_potential_gradient", "g_d", "green_eval", "inverse_power",
    "modified_rhs", "multiparticle_delta", "newton", "pbe_regularize_rhs", "project_kernel",
    "reference_tensor", "regularized_poisson", "shift_window", "short_convolve",
    "solve_poisson_dirichlet", "split_kernel", "split_tensor", "yukawa",
]
