"""Set-valued latent safety certification toolkit.

Propagate state-uncertainty zonotopes through a learned encoder with sound
enclosures, evaluate linear barrier certificates over the worst case of the
latent set, and filter commands through a CBF-style QP; includes a 16D
quadrotor slung-load gate-passage simulation and its analytics.
"""

from ._backend import BACKEND
from .certificates import BarrierHead, CertReport, EvalMode
from .modelio import LatentSafetyModel, load_model, save_model
from .plant import GateSpec, PlantParams, PlantState
from .setnn import Layer, Mlp, forward_point, forward_set
from .zonoset import Interval, Zonotope

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BarrierHead",
    "CertReport",
    "EvalMode",
    "GateSpec",
    "Interval",
    "LatentSafetyModel",
    "Layer",
    "Mlp",
    "PlantParams",
    "PlantState",
    "Zonotope",
    "forward_point",
    "forward_set",
    "load_model",
    "save_model",
    "__version__",
]
