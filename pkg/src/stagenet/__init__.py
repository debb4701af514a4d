"""stagenet: a CPU CNN micro-framework with per-stage classifier heads.

Backbones are chains of stages; every stage can feed its own classifier
head (3x3 conv, global max pool, batchnorm, linear, softplus, score
normalizer) and the per-head score vectors are summed into the model
output.  Everything is seeded and deterministic, every backward pass is
checkable against finite differences, and an experiment CLI drives
training, evaluation, statistics, verification sweeps and plotting.
"""

from .backbones import (BackboneSpec, BlockSpec, Model, ModelStats, PRESETS,
                        SetSpec, build, build_preset)
from .errors import (BuildError, ConfigError, ContractError, DataError,
                     DomainError, FormatError, NumericsError, ShapeError,
                     StagenetError)
from .heads import ClassifierHead, aggregate_scores, predict
from .scorenorm import (convergence_condition, cross_entropy,
                        cross_entropy_grad_logits, jacobian_l2_score,
                        jacobian_softmax, l2_score, l2score_partial,
                        lower_bound_ok, softmax, softmax_partial)
from .tensor import SeededRng, Tensor, elementwise, reduce, tensor_new

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec", "BlockSpec", "Model", "ModelStats", "PRESETS", "SetSpec",
    "build", "build_preset",
    "BuildError", "ConfigError", "ContractError", "DataError", "DomainError",
    "FormatError", "NumericsError", "ShapeError", "StagenetError",
    "ClassifierHead", "aggregate_scores", "predict",
    "convergence_condition", "cross_entropy", "cross_entropy_grad_logits",
    "jacobian_l2_score", "jacobian_softmax", "l2_score", "l2score_partial",
    "lower_bound_ok", "softmax", "softmax_partial",
    "SeededRng", "Tensor", "elementwise", "reduce", "tensor_new",
    "__version__",
]
