"""Training and evaluating the temporal registration network, in miniature.

The model registers a reference frame to every later frame of a sequence.
Each frame pair is encoded to a latent velocity representation; in temporal
("tlrn") mode a residual unit fuses the previous adjusted latent with the
current one before decoding, while in "baseline" mode each frame pair is
decoded independently. Velocities are exponentiated to diffeomorphic
deformations, so the warped reference stays fold-free.

Everything here is deliberately tiny (20x20 images, a few sequences, a
couple hundred parameters) so the full train/evaluate loop finishes in
about a minute on one CPU core. See the README for the desk-scale presets.

Run:  python3 demos/03_train_and_evaluate.py
Writes SVGs into demos/output/.
"""

from pathlib import Path

import torch

from tlrn import metrics, synthdata, training
from tlrn.config import ExperimentConfig, apply_assignments
from tlrn.plots import plot_sequence_strip

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

torch.set_num_threads(1)  # bit-reproducible

# ---------------------------------------------------------------------------
# 1. Configuration: one flat config object covers network, loss, training,
#    and data settings; every knob has a default.
# ---------------------------------------------------------------------------
cfg = apply_assignments(ExperimentConfig.default(), {
    "data.kind": "ring", "data.image_size": "20", "data.T": "4",
    "data.train_count": "12", "data.val_count": "2", "data.test_count": "6",
    "network.image_size": "20", "network.base_channels": "8",
    "network.num_downsamplings": "2", "network.latent_channels": "12",
    "network.residual_hidden_channels": "12",
    "train.batch_size": "4", "train.epochs": "60", "train.seed": "0",
})
cfg.validate()

# ---------------------------------------------------------------------------
# 2. Data: ring sequences with exact masks.
# ---------------------------------------------------------------------------
def make_split(offset, count):
    out = []
    for i in range(count):
        s = synthdata.derive_seed(cfg.data.seed, offset + i)
        out.append(synthdata.make_ring_sequence(
            cfg.data.image_size, cfg.data.T,
            synthdata.random_ring_schedule(cfg.data.image_size, cfg.data.T, s), s))
    return out

train_set = make_split(0, cfg.data.train_count)
test_set = make_split(cfg.data.train_count + cfg.data.val_count, cfg.data.test_count)

# ---------------------------------------------------------------------------
# 3. Train both modes with identical seeds and hyperparameters.
# ---------------------------------------------------------------------------
checkpoints = {}
for mode in ("tlrn", "baseline"):
    cfg.train.mode = mode
    print(f"--- training {mode} ---")
    ckpt = training.train(train_set, cfg,
                          on_epoch=lambda row: print(
                              f"  epoch {row['epoch']:3d}  loss {row['mean_loss']:.4f}")
                          if row["epoch"] % 20 == 0 else None)
    checkpoints[mode] = ckpt

# ---------------------------------------------------------------------------
# 4. Evaluate: per-frame MSE, folding, and propagated-segmentation quality.
#    The reference mask is deformed by each predicted deformation and
#    compared against the ground-truth mask of that frame.
# ---------------------------------------------------------------------------
for mode, ckpt in checkpoints.items():
    report = metrics.evaluate(ckpt, test_set, mode=mode)
    mse_mean, _ = report.frame_stats("mse")
    dice_mean, _ = report.frame_stats("dice")
    hd_mean, _ = report.frame_stats("hd")
    print(f"{mode:8s} final frame: MSE {mse_mean[-1]:.5f}  "
          f"Dice {dice_mean[-1]:.4f}  HD {hd_mean[-1]:.2f} px  "
          f"neg-Jacobian {report.neg_jac.mean():.5f}")

# ---------------------------------------------------------------------------
# 5. Render a sequence strip: targets, warped reference, deformation grids.
# ---------------------------------------------------------------------------
model = checkpoints["tlrn"].build_model()
plot_sequence_strip(model, test_set[0], OUT / "train_and_evaluate_strip.svg",
                    mode="tlrn")
print(f"wrote {OUT / 'train_and_evaluate_strip.svg'}")
