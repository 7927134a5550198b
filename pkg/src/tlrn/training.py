"""Sequence loss, the optimization loop, checkpointing, and gradient checks."""

from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import fields
from .config import ExperimentConfig, LossConfig, TrainConfig, parse as parse_config, \
    render as render_config
from .network import TLRN


class NumericError(Exception):
    """Raised when training encounters a non-finite loss."""


def _batch_tensor(batch, dtype=torch.float32) -> torch.Tensor:
    """Stack a list of SequenceSamples (or accept a ready tensor) into
    (B, T+1, H, W); rejects heterogeneous batches."""
    if isinstance(batch, torch.Tensor):
        if batch.dim() != 4:
            raise ValueError(f"batch tensor must be (B, T+1, H, W), got {tuple(batch.shape)}")
        return batch.to(dtype)
    if not batch:
        raise ValueError("empty batch")
    shape = batch[0].frames.shape
    for i, s in enumerate(batch):
        if s.frames.shape != shape:
            raise ValueError(f"heterogeneous batch: sample {i} has shape "
                             f"{s.frames.shape}, expected {shape}")
    return torch.stack([torch.as_tensor(s.frames, dtype=dtype) for s in batch])


def sequence_loss(model: TLRN, batch, loss_cfg: LossConfig, mode: str = "tlrn"):
    """Training loss over a batch of sequences.

    total = sum_i sum_tau [ lambda * MSE(I0 o phi^tau, I^tau)
                            + smoothness_energy(v^tau) ]
            + weight_decay * ||params||^2

    where MSE is the per-pixel mean. Returns (total, breakdown); the
    breakdown holds the three weighted contributions, which sum to the
    total exactly.
    """
    dtype = next(model.parameters()).dtype
    frames = _batch_tensor(batch, dtype)
    out = model.forward_frames(frames, use_residual=(mode == "tlrn"),
                               num_squarings=loss_cfg.num_squarings,
                               boundary=loss_cfg.boundary)
    target = frames[:, 1:]
    mse = (out.warped - target).square().mean(dim=(-2, -1))   # (B, T)
    similarity = loss_cfg.lam * mse.sum()
    smoothness = fields.smoothness_energy(out.velocities).sum()
    if mode == "tlrn":
        used = list(model.parameters())
    else:
        used = model.param_groups()["encoder_decoder"]  # baseline touches only the U-Net
    sq_norm = sum(p.square().sum() for p in used)
    regularity = loss_cfg.weight_decay * sq_norm
    total = similarity + smoothness + regularity
    breakdown = {"similarity": similarity.detach(), "smoothness": smoothness.detach(),
                 "regularity": regularity.detach()}
    return total, breakdown


# --- checkpoint container ----------------------------------------------------

@dataclass
class Checkpoint:
    config: ExperimentConfig
    model_state: dict
    optim_state: dict        # param index -> {"step","exp_avg","exp_avg_sq"}
    epoch: int
    loss_history: list[float] = field(default_factory=list)

    def build_model(self, dtype=torch.float32) -> TLRN:
        model = TLRN(self.config.network, dtype=dtype)
        state = {k: v.to(dtype) for k, v in self.model_state.items()}
        model.load_state_dict(state)
        return model


CKPT_MAGIC = b"TLRNCKPT"
CKPT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointFormatError(Exception):
    pass


def _write_section(f, name: str, payload: bytes, kind: int) -> None:
    nb = name.encode("utf-8")
    f.write(struct.pack("<H", len(nb)))
    f.write(nb)
    f.write(struct.pack("<BQ", kind, len(payload)))
    f.write(payload)


def _tensor_payload(t: torch.Tensor) -> bytes:
    a = t.detach().cpu().numpy()
    dt = np.dtype(a.dtype).newbyteorder("<")
    code = _DTYPE_CODES[np.dtype(dt)]
    head = struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype=dt).tobytes()


def _parse_tensor(payload: bytes) -> torch.Tensor:
    code, ndim = struct.unpack_from("<BB", payload, 0)
    shape = struct.unpack_from(f"<{ndim}I", payload, 2)
    arr = np.frombuffer(payload, dtype=_DTYPES[code], offset=2 + 4 * ndim).reshape(shape)
    return torch.from_numpy(arr.copy())


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    sections: list[tuple[str, bytes, int]] = []
    sections.append(("config", render_config(ckpt.config).encode("utf-8"), 0))
    sections.append(("epoch", _tensor_payload(torch.tensor([ckpt.epoch], dtype=torch.int64)), 1))
    sections.append(("loss_history",
                     _tensor_payload(torch.tensor(ckpt.loss_history, dtype=torch.float64)), 1))
    for key, t in ckpt.model_state.items():
        sections.append((f"param/{key}", _tensor_payload(t), 1))
    for idx, st in ckpt.optim_state.items():
        for part in ("step", "exp_avg", "exp_avg_sq"):
            sections.append((f"adam/{idx}/{part}", _tensor_payload(st[part]), 1))
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(sections)))
        for name, payload, kind in sections:
            _write_section(f, name, payload, kind)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CKPT_MAGIC:
        raise CheckpointFormatError(f"bad magic {data[:8]!r}")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    off = 16
    text_sections: dict[str, str] = {}
    tensors: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        kind, plen = struct.unpack_from("<BQ", data, off)
        off += 9
        payload = data[off:off + plen]
        if len(payload) != plen:
            raise CheckpointFormatError(f"truncated section {name!r}")
        off += plen
        if kind == 0:
            text_sections[name] = payload.decode("utf-8")
        else:
            tensors[name] = _parse_tensor(payload)
    if "config" not in text_sections:
        raise CheckpointFormatError("missing config section")
    cfg = parse_config(text_sections["config"])
    model_state = {k[len("param/"):]: v for k, v in tensors.items()
                   if k.startswith("param/")}
    optim_state: dict[int, dict] = {}
    for k, v in tensors.items():
        if k.startswith("adam/"):
            _, idx, part = k.split("/")
            optim_state.setdefault(int(idx), {})[part] = v
    return Checkpoint(
        config=cfg,
        model_state=model_state,
        optim_state=optim_state,
        epoch=int(tensors["epoch"].item()),
        loss_history=[float(x) for x in tensors["loss_history"]],
    )


# --- training loop -----------------------------------------------------------

LOG_COLUMNS = ["epoch", "mean_loss", "similarity", "smoothness", "regularity",
               "wall_seconds"]


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    # stateless per-epoch shuffle so checkpoint resume replays it exactly
    return np.random.default_rng([seed & 0x7FFFFFFFFFFFFFFF, epoch]).permutation(n)


def _make_optimizer(model: TLRN, tc: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=tc.learning_rate,
                            betas=(tc.adam_beta1, tc.adam_beta2),
                            eps=tc.adam_epsilon)


def _extract_optim_state(opt: torch.optim.Adam, params: list) -> dict:
    state = {}
    for idx, p in enumerate(params):
        if p in opt.state:
            st = opt.state[p]
            state[idx] = {"step": st["step"].detach().clone(),
                          "exp_avg": st["exp_avg"].detach().clone(),
                          "exp_avg_sq": st["exp_avg_sq"].detach().clone()}
    return state


def _restore_optim_state(opt: torch.optim.Adam, params: list, state: dict) -> None:
    for idx, st in state.items():
        p = params[idx]
        opt.state[p] = {"step": st["step"].clone(),
                        "exp_avg": st["exp_avg"].clone(),
                        "exp_avg_sq": st["exp_avg_sq"].clone()}


def train(dataset, exp_cfg: ExperimentConfig, *, resume: Checkpoint | None = None,
          checkpoint_path=None, log_path=None, on_epoch=None) -> Checkpoint:
    """Minibatch Adam over the dataset per the train section of the config.

    Deterministic given the seed when run single-threaded. Raises
    NumericError (naming the offending term and batch) on a non-finite loss.
    Returns the final Checkpoint; also writes rolling checkpoints and the
    CSV log when paths are given.
    """
    if not len(dataset):
        raise ValueError("empty dataset")
    tc = exp_cfg.train
    frames = _batch_tensor(list(dataset))
    n = frames.shape[0]

    if resume is not None:
        model = resume.build_model()
        opt = _make_optimizer(model, tc)
        params = list(model.parameters())
        _restore_optim_state(opt, params, resume.optim_state)
        start_epoch = resume.epoch
        history = list(resume.loss_history)
    else:
        model = TLRN(exp_cfg.network, seed=tc.seed)
        opt = _make_optimizer(model, tc)
        params = list(model.parameters())
        start_epoch = 0
        history = []

    log_file = None
    writer = None
    if log_path is not None:
        import os
        new = not os.path.exists(log_path)
        log_file = open(log_path, "a", newline="")
        writer = csv.writer(log_file)
        if new:
            writer.writerow(LOG_COLUMNS)

    try:
        for epoch in range(start_epoch + 1, tc.epochs + 1):
            t0 = time.perf_counter()
            perm = _epoch_permutation(tc.seed, epoch, n)
            sums = {"total": 0.0, "similarity": 0.0, "smoothness": 0.0,
                    "regularity": 0.0}
            nbatch = 0
            for bi, lo in enumerate(range(0, n, tc.batch_size)):
                idx = perm[lo:lo + tc.batch_size]
                batch = frames[torch.as_tensor(idx, dtype=torch.long)]
                try:
                    total, br = sequence_loss(model, batch, exp_cfg.loss, tc.mode)
                except ValueError as e:
                    if "non-finite" in str(e):
                        raise NumericError(
                            f"{e} at epoch {epoch}, batch {bi}") from e
                    raise
                for term, val in [("total", total), *br.items()]:
                    v = float(val.detach())
                    if not np.isfinite(v):
                        raise NumericError(
                            f"non-finite {term} term ({v}) at epoch {epoch}, "
                            f"batch {bi}")
                    sums[term] += v
                opt.zero_grad()
                total.backward()
                opt.step()
                nbatch += 1
            wall = time.perf_counter() - t0
            mean_loss = sums["total"] / nbatch
            history.append(mean_loss)
            row = [epoch, mean_loss, sums["similarity"] / nbatch,
                   sums["smoothness"] / nbatch, sums["regularity"] / nbatch, wall]
            if writer is not None:
                writer.writerow(row)
                log_file.flush()
            if on_epoch is not None:
                on_epoch(dict(zip(LOG_COLUMNS, row)))
            at_cadence = tc.checkpoint_every > 0 and epoch % tc.checkpoint_every == 0
            if checkpoint_path is not None and (at_cadence or epoch == tc.epochs):
                save_checkpoint(_snapshot(exp_cfg, model, opt, params, epoch, history),
                                checkpoint_path)
    finally:
        if log_file is not None:
            log_file.close()

    return _snapshot(exp_cfg, model, opt, params, tc.epochs, history)


def _snapshot(exp_cfg, model, opt, params, epoch, history) -> Checkpoint:
    return Checkpoint(
        config=exp_cfg,
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        optim_state=_extract_optim_state(opt, params),
        epoch=epoch,
        loss_history=list(history),
    )


# --- gradient verification ---------------------------------------------------

def grad_check(model: TLRN, sample, loss_cfg: LossConfig, mode: str = "tlrn",
               probe_count: int = 20, seed: int = 0, step: float = 1e-5) -> float:
    """Compare analytic gradients of the sequence loss against central finite
    differences at randomly probed parameter entries. Requires a float64
    model; returns the maximum relative error (absolute error when both
    values are below 1e-8)."""
    if next(model.parameters()).dtype != torch.float64:
        raise ValueError("grad_check requires a float64 model; 32-bit is too noisy")
    frames = _batch_tensor([sample] if hasattr(sample, "frames") else sample,
                           torch.float64)
    if frames.dim() == 3:
        frames = frames[None]

    groups = model.param_groups()
    rng = np.random.default_rng(seed)
    probes = []
    names = sorted(groups)
    for i in range(probe_count):
        group = groups[names[i % len(names)]]
        p = group[rng.integers(len(group))]
        probes.append((p, int(rng.integers(p.numel()))))

    total, _ = sequence_loss(model, frames, loss_cfg, mode)
    model.zero_grad()
    total.backward()

    def loss_value() -> float:
        with torch.no_grad():
            t, _ = sequence_loss(model, frames, loss_cfg, mode)
        return float(t)

    worst = 0.0
    for p, flat in probes:
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[flat])
        with torch.no_grad():
            orig = float(p.reshape(-1)[flat])
            p.reshape(-1)[flat] = orig + step
            plus = loss_value()
            p.reshape(-1)[flat] = orig - step
            minus = loss_value()
            p.reshape(-1)[flat] = orig
        fd = (plus - minus) / (2 * step)
        if abs(analytic) < 1e-8 and abs(fd) < 1e-8:
            err = abs(analytic - fd)
        else:
            err = abs(analytic - fd) / max(abs(analytic), abs(fd))
        worst = max(worst, err)
    return worst
