"""Multi-modal spatio-temporal fusion for pedestrian crossing-intention prediction."""

from .fusion import LADDER, PRESETS, FusionModel, ModelDims, VariantSpec, build, init_params
from .metrics import MetricsReport, evaluate, f1, roc_auc
from .tensor import Tensor, backward

__version__ = "0.1.0"
