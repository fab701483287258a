"""Encoder, bidirectional recurrent driver and SDC decoder."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import hdr
from . import tensor as T
from .cells import Cell, CellKind, make_cell
from .layers import Module, as_rng, init_conv
from .tensor import Tensor

FEATURES = 64
SDC_DILATIONS = (1, 2, 4, 8)


class Encoder(Module):
    """Two 3x3 swish convolutions, 12 -> 64 -> 64 channels."""

    def __init__(self, rng, dtype, ch=FEATURES):
        super().__init__()
        self.conv1 = init_conv(ch, 12, 3, rng, activation="swish", dtype=dtype)
        self.conv2 = init_conv(ch, ch, 3, rng, activation="swish", dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x))


class SdcBlock(Module):
    """Parallel dilated 3x3 convolutions, outputs concatenated along channels."""

    def __init__(self, in_ch, rng, dtype, branch_ch=16, dilations=SDC_DILATIONS):
        super().__init__()
        self.branch_names = []
        for d in dilations:
            name = f"dil{d}"
            setattr(self, name, init_conv(branch_ch, in_ch, 3, rng, dilation=d,
                                          activation="swish", dtype=dtype))
            self.branch_names.append(name)

    def branches(self):
        return [getattr(self, n) for n in self.branch_names]

    def __call__(self, x: Tensor) -> Tensor:
        outs = [layer(x) for layer in self.branches()]
        y = outs[0]
        for o in outs[1:]:
            y = T.concat_channels(y, o)
        return y


class Decoder(Module):
    def __init__(self, in_ch, rng, dtype, ch=FEATURES):
        super().__init__()
        self.sdc1 = SdcBlock(in_ch, rng, dtype, branch_ch=ch // len(SDC_DILATIONS))
        self.sdc2 = SdcBlock(ch, rng, dtype, branch_ch=ch // len(SDC_DILATIONS))
        self.out = init_conv(3, ch, 3, rng, activation="sigmoid", dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(self.sdc2(self.sdc1(x)))


class FusionNet(Module):
    """Encoder -> forward/reverse recurrent cells -> decoder.

    ``mode`` is ``"bi"`` (two cells with independent weights) or ``"uni"``
    (forward cell only; the decoder then takes 64 input channels).
    """

    def __init__(self, cell_kind="sgm", mode="bi", seed=0, dtype=np.float32, ch=FEATURES):
        super().__init__()
        if mode not in ("bi", "uni"):
            raise ValueError(f"mode must be 'bi' or 'uni', got {mode!r}")
        self.cell_kind = CellKind.parse(cell_kind)
        self.mode = mode
        self.dtype = np.dtype(dtype)
        self.ch = ch
        rng = as_rng(seed)
        self.encoder = Encoder(rng, dtype, ch)
        self.fwd_cell: Cell = make_cell(self.cell_kind, ch, rng, dtype)
        if mode == "bi":
            self.rev_cell: Cell = make_cell(self.cell_kind, ch, rng, dtype)
        self.decoder = Decoder(2 * ch if mode == "bi" else ch, rng, dtype, ch)

    @property
    def bidirectional(self) -> bool:
        return self.mode == "bi"

    # -- stages --------------------------------------------------------------

    def encode(self, ldr, exposure, ldr_ref, exposure_ref) -> Tensor:
        """Features for one frame; ldr arrays are (B, 3, H, W), exposures (B,) or scalars."""
        ldr = np.asarray(ldr, dtype=self.dtype)
        ldr_ref = np.asarray(ldr_ref, dtype=self.dtype)
        x_n = np.concatenate([ldr, hdr.lift(ldr, _per_item(exposure, ldr))], axis=1)
        x_r = np.concatenate([ldr_ref, hdr.lift(ldr_ref, _per_item(exposure_ref, ldr_ref))], axis=1)
        x = np.concatenate([x_n, x_r], axis=1).astype(self.dtype, copy=False)
        return self.encoder(Tensor(x))

    def unroll(self, features: Sequence[Tensor]) -> tuple[Tensor, Tensor | None]:
        if len(features) == 0:
            raise ValueError("cannot unroll an empty sequence")
        shape = features[0].shape
        for e in features:
            if e.shape != shape:
                raise T.ShapeError(f"feature shapes differ: {e.shape} vs {shape}")
        h_fwd = _run(self.fwd_cell, features)
        h_rev = _run(self.rev_cell, features[::-1]) if self.bidirectional else None
        return h_fwd, h_rev

    def decode(self, h_fwd: Tensor, h_rev: Tensor | None = None) -> Tensor:
        if self.bidirectional:
            if h_rev is None or h_rev.shape != h_fwd.shape:
                raise T.ShapeError("bidirectional decode needs two equally shaped maps")
            x = T.concat_channels(h_fwd, h_rev)
        else:
            x = h_fwd
        return self.decoder(x)

    def __call__(self, frames, exposures, ref_index) -> Tensor:
        """Fuse a batch.

        frames: (B, N, 3, H, W) in [0, 1]; exposures: (B, N) seconds;
        ref_index: int or (B,) ints. Returns Y of shape (B, 3, H, W).
        """
        frames = np.asarray(frames)
        exposures = np.asarray(exposures, dtype=np.float64)
        if frames.ndim != 5 or frames.shape[2] != 3:
            raise T.ShapeError(f"frames must be (B, N, 3, H, W), got {frames.shape}")
        b, n = frames.shape[:2]
        if exposures.shape != (b, n):
            raise T.ShapeError(f"exposures must be ({b}, {n}), got {exposures.shape}")
        ref = np.broadcast_to(np.asarray(ref_index), (b,))
        if n == 0 or np.any(ref < 0) or np.any(ref >= n):
            raise ValueError(f"reference index {ref_index} out of range for N={n}")
        rows = np.arange(b)
        ldr_ref, t_ref = frames[rows, ref], exposures[rows, ref]
        feats = [self.encode(frames[:, i], exposures[:, i], ldr_ref, t_ref) for i in range(n)]
        return self.decode(*self.unroll(feats))


def _per_item(exposure, like: np.ndarray) -> np.ndarray:
    t = np.asarray(exposure, dtype=like.dtype)
    if t.ndim == 0:
        return t
    return t.reshape(-1, 1, 1, 1)


def _run(cell: Cell, features: Sequence[Tensor]) -> Tensor:
    state = cell.init_state(features[0])
    h = state.h
    for e in features:
        h, state = cell.step(e, state)
    return h


def forward(seq, net: FusionNet) -> Tensor:
    """Fuse a single :class:`~sgmnet.data.ExposureSequence`; returns (1, 3, H, W)."""
    frames = np.stack(seq.frames)[None]
    times = np.asarray(seq.exposure_times, dtype=np.float64)[None]
    return net(frames, times, seq.ref_index)
