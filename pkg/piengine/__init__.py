from .algebra import Algebra as Algebra
from .algebra import check_axioms as check_axioms
from .algebra import make_b1 as make_b1
from .algebra import make_b2 as make_b2
from .algebra import make_generic as make_generic
from .autodiff import ParamStore as ParamStore
from .autodiff import check_gradients as check_gradients
from .autodiff import grad as grad
from .builders import build_attention as build_attention
from .builders import build_conv2d as build_conv2d
from .builders import build_gating as build_gating
from .builders import build_harmonic as build_harmonic
from .builders import build_se3_attention as build_se3_attention
from .builders import build_tfn as build_tfn
from .builders import build_tpa as build_tpa
from .config import EngineConfig as EngineConfig
from .config import RunConfig as RunConfig
from .dynamics import build_mamba as build_mamba
from .dynamics import build_ssm as build_ssm
from .dynamics import step_dynamics as step_dynamics
from .interactions import InteractionExpr as InteractionExpr
from .interactions import replace_slot as replace_slot
from .interactions import self_interaction_order as self_interaction_order
from .representations import check_equivariance as check_equivariance
from .representations import lift as lift
from .tensor import TensorElement as TensorElement
from .tensor import multiply as multiply
from .tensor import tensor_space as tensor_space

__version__ = "0.1.0"
__author__ = "piengine developers"
__url__ = ""

__all__ = [
    "Algebra",
    "EngineConfig",
    "InteractionExpr",
    "ParamStore",
    "RunConfig",
    "TensorElement",
    "build_attention",
    "build_conv2d",
    "build_gating",
    "build_harmonic",
    "build_mamba",
    "build_se3_attention",
    "build_ssm",
    "build_tfn",
    "build_tpa",
    "check_axioms",
    "check_equivariance",
    "check_gradients",
    "grad",
    "lift",
    "make_b1",
    "make_b2",
    "make_generic",
    "multiply",
    "replace_slot",
    "self_interaction_order",
    "step_dynamics",
    "tensor_space",
]
