"""Relation-scored fusion of point-cloud and multi-view shape features."""

from .autodiff import (
    Tensor,
    backward,
    concat,
    matmul,
    max_over_axis,
    mean_over_axis,
    no_grad,
    relu,
    sigmoid,
    softmax_cross_entropy,
)
from .config import DataConfig, ExperimentConfig, ModelConfig, ScheduleConfig
from .data import DatasetSplit, ShapeSample, load_dataset, make_dataset, save_dataset
from .encoders import knn_graph, point_encode, view_encode
from .fusion import enhance_views, fuse, relation_scores, select_top_k
from .gradcheck import grad_check
from .metrics import EvalReport, classification_metrics, retrieval_map
from .models import (
    LateFusionModel,
    PointOnlyModel,
    RelationFusionModel,
    ViewOnlyModel,
    build_model,
)
from .params import ParameterStore, optimizer_step
from .serialization import load_checkpoint, save_checkpoint
from .training import pretrain_unimodal, train_fusion

__version__ = "0.1.0"
