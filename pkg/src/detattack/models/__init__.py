from .base import LOSS_NAMES, STRIDE, Backbone, DetectorModel, LossBundle, to_image, to_tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .one_phase import OnePhaseDetector
from .train import TrainResult, build_model, train
from .two_phase import Proposal, ProposalSet, TwoPhaseDetector

__all__ = [
    "LOSS_NAMES", "STRIDE", "Backbone", "DetectorModel", "LossBundle", "to_image", "to_tensor",
    "load_checkpoint", "save_checkpoint", "OnePhaseDetector", "TrainResult", "build_model", "train",
    "Proposal", "ProposalSet", "TwoPhaseDetector",
]
