"""Synthetic multi-exposure scenes with a moving object."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hdr import GAMMA

T_MID = 1.0


@dataclass
class ExposureSequence:
    frames: list[np.ndarray]
    exposure_times: list[float]
    ref_index: int
    hdr_gt: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if len(self.frames) == 0 or len(self.frames) != len(self.exposure_times):
            raise ValueError("need one exposure time per frame and at least one frame")
        if not 0 <= self.ref_index < len(self.frames):
            raise ValueError(f"ref_index {self.ref_index} out of range for N={len(self.frames)}")
        if any(not t > 0 for t in self.exposure_times):
            raise ValueError("exposure times must be strictly positive")
        shape = self.frames[0].shape
        if len(shape) != 3 or shape[0] != 3:
            raise ValueError(f"frames must be (3, H, W), got {shape}")
        if any(f.shape != shape for f in self.frames):
            raise ValueError("frames differ in shape")
        if self.hdr_gt is not None and self.hdr_gt.shape != shape:
            raise ValueError(f"ground truth shape {self.hdr_gt.shape} != frame shape {shape}")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    num_blobs: int = 6
    biases: tuple[float, ...] = (-2.0, 0.0, 2.0)
    motion: float = 6.0
    quantize_8bit: bool = True

    def __post_init__(self):
        self.biases = tuple(float(b) for b in self.biases)
        if list(self.biases) != sorted(self.biases):
            raise ValueError("exposure biases must be sorted ascending")
        if self.motion < 0:
            raise ValueError("motion amplitude must be non-negative")
        if len(self.biases) == 0:
            raise ValueError("need at least one exposure bias")

    @property
    def n(self) -> int:
        return len(self.biases)

    @property
    def ref_index(self) -> int:
        return self.n // 2


def default_biases(n: int) -> tuple[float, ...]:
    """Evenly spaced stops in [-2, +2]; {-2, 0, +2} for three frames."""
    if n == 1:
        return (0.0,)
    return tuple(float(b) for b in np.linspace(-2.0, 2.0, n))


def _blob_params(rng: np.random.Generator, spec: SceneSpec):
    k = spec.num_blobs
    return {
        "cy": rng.uniform(0.15, 0.85, k) * spec.height,
        "cx": rng.uniform(0.15, 0.85, k) * spec.width,
        "sigma": rng.uniform(0.06, 0.18, k) * min(spec.height, spec.width),
        "amp": rng.uniform(0.3, 1.5, k),
        "color": rng.uniform(0.2, 1.0, (k, 3)),
        "direction": rng.uniform(0, 2 * np.pi),
        "grad": rng.uniform(0.0, 0.25, 3),
        "grad_angle": rng.uniform(0, 2 * np.pi),
    }


def _radiance(p, spec: SceneSpec, shift: tuple[float, float]) -> np.ndarray:
    """Unnormalized radiance (3, H, W); blob 0 is displaced by ``shift``."""
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    u = (np.cos(p["grad_angle"]) * xx / spec.width + np.sin(p["grad_angle"]) * yy / spec.height)
    base = 0.02 + p["grad"][:, None, None] * (u - u.min())[None]
    img = np.broadcast_to(base, (3, spec.height, spec.width)).copy()
    for j in range(spec.num_blobs):
        cy, cx = p["cy"][j], p["cx"][j]
        if j == 0:
            cy, cx = cy + shift[0], cx + shift[1]
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * p["sigma"][j] ** 2))
        img += p["amp"][j] * p["color"][j][:, None, None] * g[None]
    return img


def _quantize(v: np.ndarray) -> np.ndarray:
    # same arithmetic as the PPM reader so file roundtrips are exact
    return np.round(v * 255.0).astype(np.float32) / np.float32(255)


def generate(spec: SceneSpec) -> ExposureSequence:
    """Render one sequence; fully determined by ``spec``.

    The static radiance is normalized so the reference-position scene has
    max 1. Frame n sees blob 0 shifted by ``motion * (n - ref) / max(1, ref)``
    pixels along a random direction, so the reference frame and the ground
    truth share geometry.
    """
    rng = np.random.default_rng(spec.seed)
    p = _blob_params(rng, spec)
    ref = spec.ref_index
    gt_raw = _radiance(p, spec, (0.0, 0.0))
    scale = 1.0 / gt_raw.max()
    hdr_gt = (gt_raw * scale).astype(np.float32)
    frames, times = [], []
    span = max(1, ref, spec.n - 1 - ref)
    for n, bias in enumerate(spec.biases):
        t = T_MID * 2.0 ** bias
        if n == ref:
            radiance = gt_raw * scale
        else:
            d = spec.motion * (n - ref) / span
            shift = (d * np.sin(p["direction"]), d * np.cos(p["direction"]))
            radiance = np.clip(_radiance(p, spec, shift) * scale, 0.0, 1.0)
        ldr = np.clip((radiance * t / T_MID) ** (1.0 / GAMMA), 0.0, 1.0)
        frames.append(_quantize(ldr) if spec.quantize_8bit else ldr.astype(np.float32))
        times.append(t)
    return ExposureSequence(frames, times, ref, hdr_gt, name=f"scene_{spec.seed}")


def generate_set(seed: int, count: int, n: int = 3, size: int = 64, **kw) -> list[ExposureSequence]:
    """``count`` scenes with per-scene seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    out = []
    for i, s in enumerate(seeds):
        spec = SceneSpec(seed=int(s), height=size, width=size, biases=default_biases(n), **kw)
        seq = generate(spec)
        seq.name = f"seq_{i:03d}"
        out.append(seq)
    return out


def select_frames(seq: ExposureSequence, n: int) -> ExposureSequence:
    """Pick ``n`` frames centred on the reference.

    For seven frames this yields {2, 4, 6} (1-based) for n=3 and {2..6} for
    n=5. The reference lands at index n // 2.
    """
    total = len(seq)
    if not 1 <= n <= total:
        raise ValueError(f"cannot select {n} frames from {total}")
    stride = max(1, (total - 1) // n)
    offsets = range(-(n // 2), n - n // 2)
    idx = [seq.ref_index + k * stride for k in offsets]
    if idx[0] < 0 or idx[-1] >= total:
        # reference off-centre: fall back to a contiguous window
        start = min(max(0, seq.ref_index - n // 2), total - n)
        idx = list(range(start, start + n))
    ref = idx.index(seq.ref_index)
    return ExposureSequence([seq.frames[i] for i in idx], [seq.exposure_times[i] for i in idx],
                            ref, seq.hdr_gt, seq.name)


def shuffle_order(seq: ExposureSequence, rng: np.random.Generator) -> ExposureSequence:
    """Permute frames; the reference frame and the target stay the same."""
    perm = rng.permutation(len(seq))
    ref = int(np.flatnonzero(perm == seq.ref_index)[0])
    return ExposureSequence([seq.frames[i] for i in perm], [seq.exposure_times[i] for i in perm],
                            ref, seq.hdr_gt, seq.name)


def crop(seq: ExposureSequence, y: int, x: int, size: int) -> ExposureSequence:
    sl = (slice(None), slice(y, y + size), slice(x, x + size))
    gt = None if seq.hdr_gt is None else seq.hdr_gt[sl]
    return ExposureSequence([f[sl] for f in seq.frames], list(seq.exposure_times),
                            seq.ref_index, gt, seq.name)


def saturated_count(ldr: np.ndarray, level: float = 1.0) -> int:
    return int(np.count_nonzero(ldr >= level))
