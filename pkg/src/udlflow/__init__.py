"""udlflow: uniformly scaling piecewise-affine flows whose density level
sets are linear-constraint definable in latent space, plus statistical
validation of trained flows and a flow-conditioned robustness verifier.
"""

__version__ = "0.1.0"

from .flows import FlowModel, build_baseline, build_flow
from .radial import NormDistribution, RadialBase, StandardNormalBase

__all__ = [
    "FlowModel",
    "NormDistribution",
    "RadialBase",
    "StandardNormalBase",
    "build_baseline",
    "build_flow",
    "__version__",
]
