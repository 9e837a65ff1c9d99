"""Conditional one-class anomaly detection with generated reference clusters.

An autoencoder conditioned on kinematics maps each object to an augmented
vector (reconstruction and residual). A conditional masked autoregressive
flow, sampled through per-bin KDEs of its latent space, generates a
reference population at the object's conditions. HDBSCAN/GLOSH scores the
object against that population and a quantile of the population's own
scores sets the acceptance threshold.
"""

from .cae import CaeConfig, CaeModel, FeatureRecord, train_cae
from .clustering import build_hierarchy, cluster_and_score, outlier_scores, quantile_threshold
from .config import RunConfig, load_config
from .core import Adam, LayerStack, TrainingConfig, huber_loss, train_loop
from .data import Dataset, read_csv, write_csv
from .errors import FluxMutError
from .flow import FlowConfig, FlowModel, init_flow, train_flow
from .kde import BinGrid, BinnedKde
from .kde import build as build_kde
from .pipeline import (Decision, FluxMutModel, ObjectScore, PipelineConfig, ablate_residuals, evaluate,
                       infer, roc_auc, score_dataset, score_object)
from .synth import SynthSpec, generate, perturb

__all__ = [
    "Adam", "BinGrid", "BinnedKde", "CaeConfig", "CaeModel", "Dataset", "Decision", "FeatureRecord",
    "FlowConfig", "FlowModel", "FluxMutError", "FluxMutModel", "LayerStack", "ObjectScore",
    "PipelineConfig", "RunConfig", "SynthSpec", "TrainingConfig", "ablate_residuals", "build_hierarchy",
    "build_kde", "cluster_and_score", "evaluate", "generate", "huber_loss", "infer", "init_flow",
    "load_config", "outlier_scores", "perturb", "quantile_threshold", "read_csv", "roc_auc",
    "score_dataset", "score_object", "train_cae", "train_flow", "train_loop", "write_csv",
]
