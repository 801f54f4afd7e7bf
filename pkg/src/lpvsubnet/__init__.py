"""LPV state-space identification with learned scheduling and sub-space encoders."""
from .kernels import BACKEND
from .lpv_model import LpvSsModel, LpvSubnet
from .metrics import bfr, noise_ceiling_bfr

__version__ = "0.1.0"

__all__ = ["BACKEND", "LpvSsModel", "LpvSubnet", "bfr", "noise_ceiling_bfr", "__version__"]
