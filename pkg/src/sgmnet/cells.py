"""Recurrent cells sharing one step signature: ``cell.step(E, state) -> (h, state)``.

Shapes: E, h and c are all (B, ch, H, W). Cells that do not use an internal
memory (GRU, vanilla) carry ``c`` as zeros so every kind is interchangeable
inside the bidirectional driver.

The SGM cell with input i, transform t, update weight w:

    i_n = swish(conv([h_{n-1}, E_n]))
    t_n = swish(conv(c_{n-1}))
    w_n = sigmoid(conv([i_n, t_n]))
    c_n = w_n * t_n + (1 - w_n) * i_n
    h_n = swish(conv([c_{n-1}, c_n + E_n]))
"""

from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .layers import Module, as_rng, init_conv
from .tensor import Tensor, concat_channels as cat


class CellState(NamedTuple):
    h: Tensor
    c: Tensor


class CellKind(str, enum.Enum):
    SGM = "sgm"
    TYPE1 = "type1"
    TYPE2 = "type2"
    TYPE3 = "type3"
    TYPE4 = "type4"
    TYPE5 = "type5"
    TYPE6 = "type6"
    TYPE7 = "type7"
    LSTM = "lstm"
    GRU = "gru"
    VANILLA = "vanilla"

    @classmethod
    def parse(cls, value) -> "CellKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower())


ALL_KINDS = tuple(CellKind)

# kinds whose memory update is the convex blend w*t + (1-w)*i
CONVEX_KINDS = (CellKind.SGM, CellKind.TYPE1, CellKind.TYPE2, CellKind.TYPE3, CellKind.TYPE5)


def zero_state(like: Tensor, ch: int) -> CellState:
    b, _, h, w = like.shape
    z = np.zeros((b, ch, h, w), dtype=like.dtype)
    return CellState(Tensor(z), Tensor(z.copy()))


def _check(E: Tensor, state: CellState, ch: int) -> None:
    if E.ndim != 4 or E.shape[1] != ch:
        raise T.ShapeError(f"cell input must be (B, {ch}, H, W), got {E.shape}")
    for name, s in zip("hc", state):
        if s.shape != (E.shape[0], ch) + E.shape[2:]:
            raise T.ShapeError(f"state {name} has shape {s.shape}, input {E.shape}")


class Cell(Module):
    kind: CellKind

    def __init__(self, ch: int = 64):
        super().__init__()
        self.ch = ch

    def init_state(self, E: Tensor) -> CellState:
        return zero_state(E, self.ch)

    def step(self, E: Tensor, state: CellState) -> tuple[Tensor, CellState]:
        _check(E, state, self.ch)
        h, c = self._step(E, state.h, state.c)
        return h, CellState(h, c)

    def _step(self, E, h_prev, c_prev):
        raise NotImplementedError

    __call__ = step


class SGMCell(Cell):
    """Self-gated memory cell. ``output_inputs`` selects the output-gate wiring.

    ``"full"``       c_{n-1} and (c_n + E_n), 2*ch channels (final cell)
    ``"no_cprev"``   (c_n + E_n) only (Type 1)
    ``"no_input"``   c_{n-1} and c_n (Type 2)
    ``"cnew_only"``  c_n only (Type 3)
    """

    _OUT_WIDTH = {"full": 2, "no_cprev": 1, "no_input": 2, "cnew_only": 1}

    def __init__(self, ch=64, seed=0, dtype=np.float32, output_inputs="full",
                 kind=CellKind.SGM):
        super().__init__(ch)
        rng = as_rng(seed)
        self.kind = kind
        self.output_inputs = output_inputs
        self.input_gate = init_conv(ch, 2 * ch, 3, rng, activation="swish", dtype=dtype)
        self.transform_gate = init_conv(ch, ch, 3, rng, activation="swish", dtype=dtype)
        self.update_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        width = self._OUT_WIDTH[output_inputs]
        self.output_gate = init_conv(ch, width * ch, 3, rng, activation="swish", dtype=dtype)

    def gates(self, E, h_prev, c_prev):
        """Return (i, t, w, c) for one step; exposed for invariant checks."""
        i = self.input_gate(cat(h_prev, E))
        t = self.transform_gate(c_prev)
        w = self.update_gate(cat(i, t))
        c = T.blend(w, t, i)
        return i, t, w, c

    def _output(self, E, c_prev, c):
        mode = self.output_inputs
        if mode == "full":
            x = cat(c_prev, c + E)
        elif mode == "no_cprev":
            x = c + E
        elif mode == "no_input":
            x = cat(c_prev, c)
        else:
            x = c
        return self.output_gate(x)

    def _step(self, E, h_prev, c_prev):
        _, _, _, c = self.gates(E, h_prev, c_prev)
        return self._output(E, c_prev, c), c


class NoTransformCell(SGMCell):
    """Type 4: transform gate removed; raw c_{n-1} takes its place."""

    def __init__(self, ch=64, seed=0, dtype=np.float32):
        Cell.__init__(self, ch)
        rng = as_rng(seed)
        self.kind = CellKind.TYPE4
        self.output_inputs = "full"
        self.input_gate = init_conv(ch, 2 * ch, 3, rng, activation="swish", dtype=dtype)
        self.update_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.output_gate = init_conv(ch, 2 * ch, 3, rng, activation="swish", dtype=dtype)

    def _step(self, E, h_prev, c_prev):
        i = self.input_gate(cat(h_prev, E))
        w = self.update_gate(cat(i, c_prev))
        c = T.blend(w, c_prev, i)
        return self._output(E, c_prev, c), c


class TwoLayerGateCell(Cell):
    """Type 5: each self-gate becomes tanh(conv_a x) * sigmoid(conv_b x).

    The output gate follows the LSTM wiring: a sigmoid layer on
    [h_{n-1}, E_n] multiplies a tanh layer applied to c_n.
    """

    kind = CellKind.TYPE5

    def __init__(self, ch=64, seed=0, dtype=np.float32):
        super().__init__(ch)
        rng = as_rng(seed)
        self.input_tanh = init_conv(ch, 2 * ch, 3, rng, activation="tanh", dtype=dtype)
        self.input_sigmoid = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.transform_tanh = init_conv(ch, ch, 3, rng, activation="tanh", dtype=dtype)
        self.transform_sigmoid = init_conv(ch, ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.update_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.output_sigmoid = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.output_tanh = init_conv(ch, ch, 3, rng, activation="tanh", dtype=dtype)

    def gates(self, E, h_prev, c_prev):
        hx = cat(h_prev, E)
        i = self.input_tanh(hx) * self.input_sigmoid(hx)
        t = self.transform_tanh(c_prev) * self.transform_sigmoid(c_prev)
        w = self.update_gate(cat(i, t))
        c = T.blend(w, t, i)
        return i, t, w, c

    def _step(self, E, h_prev, c_prev):
        _, _, _, c = self.gates(E, h_prev, c_prev)
        h = self.output_sigmoid(cat(h_prev, E)) * self.output_tanh(c)
        return h, c


class ForgetStyleCell(Cell):
    """Types 6 and 7: the weight map comes from [h_{n-1}, E_n] only.

    Type 6 blends: c_n = w * c_{n-1} + (1 - w) * i_n.
    Type 7 forgets first, then integrates: c_n = w * c_{n-1} + i_n.
    """

    def __init__(self, ch=64, seed=0, dtype=np.float32, kind=CellKind.TYPE6):
        super().__init__(ch)
        rng = as_rng(seed)
        self.kind = kind
        self.input_gate = init_conv(ch, 2 * ch, 3, rng, activation="swish", dtype=dtype)
        self.update_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.output_gate = init_conv(ch, 2 * ch, 3, rng, activation="swish", dtype=dtype)

    def _step(self, E, h_prev, c_prev):
        hx = cat(h_prev, E)
        w = self.update_gate(hx)
        i = self.input_gate(hx)
        if self.kind is CellKind.TYPE6:
            c = T.blend(w, c_prev, i)
        else:
            c = w * c_prev + i
        h = self.output_gate(cat(c_prev, c + E))
        return h, c


class LSTMCell(Cell):
    """Convolutional LSTM without peepholes; four gates with separate kernels."""

    kind = CellKind.LSTM

    def __init__(self, ch=64, seed=0, dtype=np.float32):
        super().__init__(ch)
        rng = as_rng(seed)
        self.forget_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.input_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.output_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.candidate = init_conv(ch, 2 * ch, 3, rng, activation="tanh", dtype=dtype)

    def _step(self, E, h_prev, c_prev):
        hx = cat(h_prev, E)
        f = self.forget_gate(hx)
        i = self.input_gate(hx)
        o = self.output_gate(hx)
        g = self.candidate(hx)
        c = f * c_prev + i * g
        return o * T.tanh(c), c


class GRUCell(Cell):
    kind = CellKind.GRU

    def __init__(self, ch=64, seed=0, dtype=np.float32):
        super().__init__(ch)
        rng = as_rng(seed)
        self.update_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.reset_gate = init_conv(ch, 2 * ch, 3, rng, activation="sigmoid", dtype=dtype)
        self.candidate = init_conv(ch, 2 * ch, 3, rng, activation="tanh", dtype=dtype)

    def _step(self, E, h_prev, c_prev):
        hx = cat(h_prev, E)
        z = self.update_gate(hx)
        r = self.reset_gate(hx)
        cand = self.candidate(cat(r * h_prev, E))
        h = z * h_prev + (1.0 - z) * cand
        return h, c_prev


class VanillaCell(Cell):
    kind = CellKind.VANILLA

    def __init__(self, ch=64, seed=0, dtype=np.float32):
        super().__init__(ch)
        self.hidden = init_conv(ch, 2 * ch, 3, as_rng(seed), activation="tanh", dtype=dtype)

    def _step(self, E, h_prev, c_prev):
        return self.hidden(cat(h_prev, E)), c_prev


def make_cell(kind, ch: int = 64, seed=0, dtype=np.float32) -> Cell:
    kind = CellKind.parse(kind)
    if kind is CellKind.SGM:
        return SGMCell(ch, seed, dtype)
    if kind in (CellKind.TYPE1, CellKind.TYPE2, CellKind.TYPE3):
        wiring = {CellKind.TYPE1: "no_cprev", CellKind.TYPE2: "no_input", CellKind.TYPE3: "cnew_only"}[kind]
        return SGMCell(ch, seed, dtype, output_inputs=wiring, kind=kind)
    if kind is CellKind.TYPE4:
        return NoTransformCell(ch, seed, dtype)
    if kind is CellKind.TYPE5:
        return TwoLayerGateCell(ch, seed, dtype)
    if kind in (CellKind.TYPE6, CellKind.TYPE7):
        return ForgetStyleCell(ch, seed, dtype, kind=kind)
    return {CellKind.LSTM: LSTMCell, CellKind.GRU: GRUCell, CellKind.VANILLA: VanillaCell}[kind](ch, seed, dtype)
