from .kernels import BACKEND
from .model import *  # noqa: F401,F403
from .model import __all__ as _model_all

__all__ = ["BACKEND"] + list(_model_all)
