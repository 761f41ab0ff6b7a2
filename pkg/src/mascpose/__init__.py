"""Motion-adaptive multi-scale temporal pose lifting at desk scale.

A from-scratch implementation of 2D-to-3D human pose sequence lifting:
a float64 reverse-mode autodiff engine, a skeleton-constrained adaptive
spatial GCN combined with adaptive multi-scale temporal modelling, the
composite training objective, standard pose metrics, a deterministic
synthetic motion pipeline, an analytic cost profiler, and a CLI.
"""

from .errors import (
    AxisError,
    ContractError,
    FileFormatError,
    GenerationError,
    MascError,
    NumericError,
    ParameterError,
    ShapeError,
)
from .losses import LossWeights, accel_loss, mpjpe_loss, n_mpjpe_loss, total_loss, velocity_loss
from .metrics import (
    MetricReport,
    accel_error,
    mpjpe,
    n_mpjpe,
    p_mpjpe,
    pck_auc,
    procrustes_align,
    velocity_error,
)
from .model import ModelConfig, PoseLiftModel, build_temporal_adjacency, partition, unpartition
from .profiler import CostReport, count
from .skeleton import SkeletonTopology, SpatialAdjacency, default_h36m_topology, k_hop_adjacency
from .synth import (
    CameraSpec,
    DatasetManifest,
    MotionSpec,
    PoseSequence,
    SequenceEntry,
    generate_dataset,
    generate_motion,
    load_dataset,
    project,
    read_pseq,
    root_relative,
    write_pseq,
)
from .tensor import (
    BatchNormState,
    Tensor,
    batch_norm,
    cosine_similarity_matrix,
    count_macs,
    matmul,
    relu,
    softmax,
    topk_mask,
)
from .train import AdamW, TrainConfig, ablation_run, evaluate, train, variant_config

__version__ = "0.1.0"
