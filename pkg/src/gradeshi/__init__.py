"""From-scratch CNN micro-engine for handwritten character classification.

Three architecture families (plain conv stacks, residual blocks with skip
links, depthwise-separable stacks), explicit reverse-mode layer gradients,
Adam training, block/layer freezing for transfer learning, and a CLI over
the whole pipeline.
"""

import os

# Cap internal parallelism before numpy binds its thread pools.
_threads = os.environ.get("GRADESHI_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del os, _threads

from .architectures import (ArchConfig, build, build_mini_mobilenet,  # noqa: E402
                            build_mini_resnet, build_simple_cnn, set_trainable_prefix)
from .checkpoint import (Checkpoint, load_checkpoint, read_checkpoint,  # noqa: E402
                         save_checkpoint)
from .data import (DatasetIndex, ExampleSet, SplitSpec, batches,  # noqa: E402
                   default_manifest, filter_category, load_examples, load_image,
                   load_manifest, one_hot, scan_dataset, stratified_split, subsample)
from .errors import GradeshiError  # noqa: E402
from .layers import depthwise_separable_block  # noqa: E402
from .network import Network  # noqa: E402
from .optim import (Adam, AdamState, BatchMetrics, accuracy, adam_step,  # noqa: E402
                    cross_entropy, softmax_cross_entropy_backward)
from .tensor import Tensor, argmax_last_axis, matmul  # noqa: E402
from .training import (EpochRecord, TrainConfig, evaluate, evaluate_by_category,  # noqa: E402
                       export_metrics, read_metrics_csv, train, transfer)

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "Adam", "AdamState", "BatchMetrics", "Checkpoint",
    "DatasetIndex", "EpochRecord", "ExampleSet", "GradeshiError", "Network",
    "SplitSpec", "Tensor", "TrainConfig", "accuracy", "adam_step",
    "argmax_last_axis", "batches", "build", "build_mini_mobilenet",
    "build_mini_resnet", "build_simple_cnn", "cross_entropy",
    "default_manifest", "depthwise_separable_block", "evaluate",
    "evaluate_by_category", "export_metrics", "filter_category",
    "load_checkpoint", "load_examples", "load_image", "load_manifest",
    "matmul", "one_hot", "read_checkpoint", "read_metrics_csv",
    "save_checkpoint", "scan_dataset", "set_trainable_prefix",
    "softmax_cross_entropy_backward", "stratified_split", "subsample",
    "train", "transfer",
]
