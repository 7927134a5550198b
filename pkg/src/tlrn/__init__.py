"""Time-series diffeomorphic image registration with temporal latent
residual networks."""

from .fields import (BoundaryMode, compose, exp_map, identity_displacement,
                     jacobian_determinant, neg_jacobian_fraction,
                     smoothness_energy, warp_image)
from .network import TLRN, NetworkConfig, SequenceOutput, baseline_forward, tlrn_forward
from .config import DataConfig, ExperimentConfig, LossConfig, TrainConfig
from .synthdata import (LemniscateSpec, SequenceSample, lemniscate_contour,
                        make_lemniscate_sequence, make_ring_sequence,
                        rasterize_contour, read_dataset, write_dataset)
from .training import Checkpoint, grad_check, load_checkpoint, save_checkpoint, \
    sequence_loss, train
from .metrics import EvalReport, dice, evaluate, hausdorff, mse, propagate_segmentation

__version__ = "0.1.0"
