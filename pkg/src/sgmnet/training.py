"""Adam training of a FusionNet on exposure sequences."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from . import hdr
from . import tensor as T
from .cells import CellKind
from .data import ExposureSequence, crop, select_frames, shuffle_order
from .network import FusionNet, forward

log = logging.getLogger(__name__)

LOG_HEADER = ("step", "epoch", "lr", "loss", "psnr_l", "psnr_t")
PRECISIONS = {"f32": np.float32, "f64": np.float64}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 4
    epochs: int = 200
    halve_every: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patch_size: int = 64
    seed: int = 0
    cell_kind: str = "sgm"
    mode: str = "bi"
    shuffle_exposure_order: bool = False
    variable_length_set: tuple[int, ...] = ()
    precision: str = "f32"
    max_steps: int = 0
    log_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        self.cell_kind = CellKind.parse(self.cell_kind).value
        self.variable_length_set = tuple(int(n) for n in self.variable_length_set)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ValueError("patch_size must be even")
        if self.halve_every < 1:
            raise ValueError("halve_every must be >= 1")
        if self.mode not in ("bi", "uni"):
            raise ValueError(f"mode must be 'bi' or 'uni', got {self.mode!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variable_length_set"] = list(self.variable_length_set)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def scheduled_lr(base: float, epoch: int, halve_every: int = 25) -> float:
    """Learning rate for a 1-based epoch: halved after every ``halve_every`` epochs."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return base * 0.5 ** ((epoch - 1) // halve_every)


class Adam:
    """Bias-corrected Adam over a named parameter registry."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0

    def step(self, lr: float, grads=None) -> None:
        grads = grads or {n: p.grad for n, p in self.params.items()}
        for name, g in grads.items():
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            adam_step(p.data, g, self.m[name], self.v[name], lr, self.beta1, self.beta2, self.eps, bc1, bc2)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, lr: float,
              beta1: float, beta2: float, eps: float, bc1: float, bc2: float) -> None:
    """In-place update of ``param``, ``m`` and ``v``."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * (grad * grad)
    param -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(param.dtype, copy=False)


# -- batches -------------------------------------------------------------------


@dataclass
class Batch:
    frames: np.ndarray      # (B, N, 3, P, P)
    exposures: np.ndarray   # (B, N)
    ref_index: np.ndarray   # (B,)
    target: np.ndarray      # (B, 3, P, P)


def stack_batch(seqs: Sequence[ExposureSequence], dtype=np.float32) -> Batch:
    n = {len(s) for s in seqs}
    if len(n) != 1:
        raise ValueError(f"all sequences in a batch need the same length, got {sorted(n)}")
    if any(s.hdr_gt is None for s in seqs):
        raise ValueError("training sequences need ground truth")
    return Batch(
        np.stack([np.stack(s.frames) for s in seqs]).astype(dtype, copy=False),
        np.array([s.exposure_times for s in seqs], dtype=np.float64),
        np.array([s.ref_index for s in seqs]),
        np.stack([s.hdr_gt for s in seqs]).astype(dtype, copy=False),
    )


def sample_batch(dataset: Sequence[ExposureSequence], indices, cfg: TrainConfig,
                 rng: np.random.Generator) -> Batch:
    n = int(rng.choice(cfg.variable_length_set)) if cfg.variable_length_set else None
    items = []
    for i in indices:
        seq = dataset[i]
        if n is not None:
            seq = select_frames(seq, n)
        if cfg.shuffle_exposure_order:
            seq = shuffle_order(seq, rng)
        _, h, w = seq.frames[0].shape
        p = min(cfg.patch_size, h, w)
        y = int(rng.integers(0, h - p + 1))
        x = int(rng.integers(0, w - p + 1))
        items.append(crop(seq, y, x, p))
    return stack_batch(items, cfg.dtype)


# -- training ------------------------------------------------------------------


def build_net(cfg: TrainConfig) -> FusionNet:
    return FusionNet(cfg.cell_kind, cfg.mode, seed=cfg.seed, dtype=cfg.dtype)


def net_from_checkpoint(ck: ckpt_io.Checkpoint) -> FusionNet:
    cfg = TrainConfig.from_dict(ck.config)
    net = build_net(cfg)
    ckpt_io.load_into(net.registry(), ck)
    return net


def train_step(net: FusionNet, opt: Adam, batch: Batch, lr: float) -> tuple[float, np.ndarray]:
    with T.Tape() as tape:
        y = net(batch.frames, batch.exposures, batch.ref_index)
        loss = hdr.loss(y, batch.target)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    tape.backward(loss)
    opt.step(lr)
    return value, y.data


@dataclass
class TrainResult:
    net: FusionNet
    checkpoint: ckpt_io.Checkpoint
    log: list[dict] = field(default_factory=list)
    steps: int = 0


def train(cfg: TrainConfig, dataset: Sequence[ExposureSequence], ckpt_path=None, log_path=None,
          callback: Callable[[int, FusionNet], bool] | None = None,
          net: FusionNet | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs (capped by ``cfg.max_steps`` when non-zero).

    One epoch is one shuffled pass over ``dataset`` in batches of
    ``cfg.batch_size``. ``callback(step, net)`` runs after every step and may
    return True to stop. On a non-finite loss or gradient the last good
    parameters are restored, saved to ``ckpt_path`` and TrainingError raised.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    net = net or build_net(cfg)
    params = net.registry()
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    rows: list[dict] = []
    writer = None
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_HEADER)

    def snapshot(step):
        return ckpt_io.from_registry(params, step, cfg.to_dict())

    step = 0
    last_good = snapshot(0)
    stop = False
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = scheduled_lr(cfg.learning_rate, epoch, cfg.halve_every)
            order = rng.permutation(len(dataset))
            for start in range(0, len(order), cfg.batch_size):
                batch = sample_batch(dataset, order[start:start + cfg.batch_size], cfg, rng)
                try:
                    loss, pred = train_step(net, opt, batch, lr)
                except FloatingPointError as exc:
                    ckpt_io.load_into(params, last_good)
                    if ckpt_path is not None:
                        ckpt_io.save(ckpt_path, last_good)
                    raise TrainingError(f"step {step + 1}: {exc}; kept checkpoint from step {last_good.step}") from exc
                step += 1
                if step % cfg.log_every == 0:
                    row = {"step": step, "epoch": epoch, "lr": lr, "loss": loss,
                           "psnr_l": hdr.psnr_linear(pred, batch.target),
                           "psnr_t": hdr.psnr_tonemapped(np.clip(pred, 0, 1), batch.target)}
                    rows.append(row)
                    if writer is not None:
                        writer.writerow([row[k] for k in LOG_HEADER])
                        log_file.flush()
                    log.info("step %d epoch %d lr %.3g loss %.6f psnr_t %.2f",
                             step, epoch, lr, loss, row["psnr_t"])
                last_good = snapshot(step)
                if ckpt_path is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    ckpt_io.save(ckpt_path, last_good)
                if callback is not None and callback(step, net):
                    stop = True
                if stop or (cfg.max_steps and step >= cfg.max_steps):
                    stop = True
                    break
            if stop:
                break
    finally:
        if log_file is not None:
            log_file.close()
    final = snapshot(step)
    if ckpt_path is not None:
        ckpt_io.save(ckpt_path, final)
    return TrainResult(net, final, rows, step)


# -- evaluation ----------------------------------------------------------------


def fuse(net: FusionNet, seq: ExposureSequence) -> np.ndarray:
    """Fused HDR image (3, H, W) for one sequence, no tape."""
    return forward(seq, net).data[0]


def evaluate(net: FusionNet, sequences: Sequence[ExposureSequence], n: int | None = None) -> list[dict]:
    rows = []
    for seq in sequences:
        if seq.hdr_gt is None:
            raise ValueError(f"sequence {seq.name!r} has no ground truth")
        s = select_frames(seq, n) if n is not None else seq
        y = fuse(net, s).astype(np.float64)
        rows.append({"name": seq.name, "N": len(s),
                     "psnr_l": hdr.psnr_linear(y, seq.hdr_gt),
                     "psnr_t": hdr.psnr_tonemapped(y, seq.hdr_gt)})
    return rows


def dataset_psnr(net: FusionNet, sequences, n: int | None = None) -> tuple[float, float]:
    """PSNR-L / PSNR-T over all pixels of all sequences (pooled MSE)."""
    preds, gts = [], []
    for seq in sequences:
        s = select_frames(seq, n) if n is not None else seq
        preds.append(fuse(net, s).astype(np.float64))
        gts.append(seq.hdr_gt)
    p, g = np.stack(preds), np.stack(gts)
    return hdr.psnr_linear(p, g), hdr.psnr_tonemapped(p, g)


def read_log(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def save_log(path, rows) -> None:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([r[k] for k in LOG_HEADER])
