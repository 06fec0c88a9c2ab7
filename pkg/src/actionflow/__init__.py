"""actionflow: joint optical-flow estimation and action recognition on a
synthetic video corpus, built on a from-scratch reverse-mode autodiff
tensor core.

Subpackage map:
    tensor      autodiff substrate (Tensor, Parameter, ops, backward)
    gradcheck   finite-difference gradient verification
    layers      conv/deconv (2D+3D), batch norm, pooling, residual blocks
    models      the network variants, builders, weight transfer
    losses      EPE variants, cross-entropy, multitask loss, metrics
    synthdata   procedural clips with analytic ground-truth flow
    trainer     Adam, training regimes, forgetting probe
    evaluation  protocol eval, occlusion saliency, flow rendering, study
    flowio      .flo / PNG formats
    checkpoint  AFNC binary checkpoints
    config/cli  JSON run configs and the command-line front end
"""

from .tensor import Tensor, Parameter, backward, no_grad
from .gradcheck import grad_check, max_error
from .models import ModelSpec, Model, build, build_stacked, strip_decoder, transfer_encoder, trace_shapes
from .losses import FlowField, LossWeights, epe, multiframe_epe, multiscale_epe, resample_flow, cross_entropy, multitask_loss, accuracy, per_class_accuracy
from .synthdata import (
    MOTION_CLASSES,
    SceneSpec,
    Clip,
    ClipDataset,
    displacement_profile,
    generate,
    generate_dataset,
    analytic_flow,
    augment,
    AugmentPolicy,
)
from .trainer import Adam, TrainConfig, train, forgetting_probe, eval_classifier, eval_flow
from .evaluation import EvalProtocol, evaluate, occlusion_map, flow_to_rgb, future_prediction_eval, flow_quality_study
from .flowio import read_flo, write_flo
from .checkpoint import save_model, load_model, save_checkpoint, load_checkpoint

__version__ = "0.1.0"
