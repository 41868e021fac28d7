"""Cascaded cross-modal transformer for dual request/complaint detection.

Subpackages:
  tensor     differentiable dense ops (reverse mode, from scratch)
  gradcheck  finite-difference gradient verification
  tokens     modality token sets and k-token uniformization
  storage    binary embedding interchange format and JSON-lines manifest
  synth      seeded synthetic benchmark with a pooled-feature oracle
  model      the two-stage cross-attention cascade
  baselines  voting / MLP / vanilla-transformer fusers
  training   loss, Adam, UAR metrics, the training loop
  checkpoint binary parameter snapshots
  cli        command-line front end
"""

from .baselines import FuserKind, FuserSpec, build_fuser, plurality_vote
from .gradcheck import grad_check
from .model import CcmtConfig, CcmtParams, ccmt_forward, cross_attention_block, init_params
from .rng import Rng
from .synth import SynthConfig, generate_dataset, oracle_unimodal_uar
from .tensor import Tensor, backward
from .tokens import Modality, SampleRecord, TokenSet, prepend_class_token, uniformize
from .training import Metrics, TrainConfig, adam_step, bce_loss, evaluate, train

__all__ = [
    "CcmtConfig",
    "CcmtParams",
    "FuserKind",
    "FuserSpec",
    "Metrics",
    "Modality",
    "Rng",
    "SampleRecord",
    "SynthConfig",
    "Tensor",
    "TokenSet",
    "TrainConfig",
    "adam_step",
    "backward",
    "bce_loss",
    "build_fuser",
    "ccmt_forward",
    "cross_attention_block",
    "evaluate",
    "generate_dataset",
    "grad_check",
    "init_params",
    "oracle_unimodal_uar",
    "plurality_vote",
    "prepend_class_token",
    "train",
    "uniformize",
]
