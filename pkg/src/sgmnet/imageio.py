"""PFM / PPM files and the plain-text sequence manifest.

Images are (3, H, W) float32 arrays. PFM stores rows bottom-to-top and
interleaved RGB; a negative scale means little-endian. PPM is the binary
P6 variant with maxval 255, mapped to k / 255.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ExposureSequence


class ImageFormatError(ValueError):
    pass


def _read_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Split ``count`` whitespace-separated header tokens; skip '#' comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("header not terminated")
    return tokens, pos + 1


def _dims(tokens) -> tuple[int, int]:
    try:
        w, h = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise ImageFormatError(f"bad dimensions {tokens!r}") from exc
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"non-positive dimensions {w}x{h}")
    return w, h


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, offset = _read_tokens(buf, 4)
    if tokens[0] == b"Pf":
        raise ImageFormatError("grayscale PFM ('Pf') is not supported")
    if tokens[0] != b"PF":
        raise ImageFormatError(f"not a PFM file (magic {tokens[0]!r})")
    w, h = _dims(tokens[1:3])
    try:
        scale = float(tokens[3])
    except ValueError as exc:
        raise ImageFormatError(f"bad scale {tokens[3]!r}") from exc
    if scale == 0:
        raise ImageFormatError("scale must be non-zero")
    dt = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    nbytes = w * h * 3 * 4
    payload = buf[offset:]
    if len(payload) < nbytes:
        raise ImageFormatError(f"truncated payload: {len(payload)} of {nbytes} bytes")
    if len(payload) > nbytes:
        raise ImageFormatError(f"{len(payload) - nbytes} trailing bytes after payload")
    img = np.frombuffer(payload, dtype=dt).reshape(h, w, 3)[::-1]
    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float32)


def write_pfm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f"expected (3, H, W), got {img.shape}")
    _, h, w = img.shape
    body = np.ascontiguousarray(img.transpose(1, 2, 0)[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(b"PF\n%d %d\n-1.0\n" % (w, h))
        f.write(body)


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, offset = _read_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise ImageFormatError(f"only binary P6 PPM is supported (magic {tokens[0]!r})")
    w, h = _dims(tokens[1:3])
    if tokens[3] != b"255":
        raise ImageFormatError(f"only maxval 255 is supported, got {tokens[3]!r}")
    payload = buf[offset:]
    if len(payload) != w * h * 3:
        raise ImageFormatError(f"payload is {len(payload)} bytes, expected {w * h * 3}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return img.astype(np.float32) / np.float32(255)


def write_ppm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f"expected (3, H, W), got {img.shape}")
    _, h, w = img.shape
    q = np.round(np.clip(img, 0, 1) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes())


def read_image(path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".ppm":
        return read_ppm(path)
    raise ImageFormatError(f"unsupported image extension {suffix!r}")


# -- manifest ----------------------------------------------------------------


@dataclass
class SequenceDescriptor:
    name: str
    frame_paths: list[Path]
    exposure_times: list[float]
    ref_index: int
    gt_path: Path | None = None

    def __len__(self) -> int:
        return len(self.frame_paths)

    def load(self) -> ExposureSequence:
        frames = [read_image(p) for p in self.frame_paths]
        gt = read_image(self.gt_path) if self.gt_path is not None else None
        return ExposureSequence(frames, list(self.exposure_times), self.ref_index, gt, self.name)


def _finish_block(block, base: Path, lineno: int, index: int) -> SequenceDescriptor:
    frames, times, ref, gt, name = block["frames"], block["times"], block["ref"], block["gt"], block["name"]
    if not frames:
        raise ValueError(f"manifest block ending at line {lineno} has no frames")
    if ref is None:
        raise ValueError(f"manifest block ending at line {lineno} is missing 'ref'")
    if not 0 <= ref < len(frames):
        raise ValueError(f"ref {ref} out of range for {len(frames)} frames (line {lineno})")
    return SequenceDescriptor(name or f"seq_{index:03d}", frames, times, ref, gt)


def _resolve(base: Path, raw: str, lineno: int) -> Path:
    p = Path(raw)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise FileNotFoundError(f"manifest line {lineno}: no such file {raw!r}")
    return p


def manifest_load(path) -> list[SequenceDescriptor]:
    """Parse a manifest; paths resolve relative to the manifest's directory.

    Each block holds ``frame <path> <seconds>`` lines, one ``ref <index>``,
    optionally ``gt <path>`` and ``name <label>``; blank lines end blocks.
    """
    path = Path(path)
    base = path.parent
    out: list[SequenceDescriptor] = []

    def empty():
        return {"frames": [], "times": [], "ref": None, "gt": None, "name": None}

    block = empty()
    started = False
    lineno = 0
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if line.startswith("#"):
            continue
        if not line:
            if started:
                out.append(_finish_block(block, base, lineno, len(out)))
                block, started = empty(), False
            continue
        started = True
        key, _, rest = line.partition(" ")
        args = rest.split()
        if key == "frame":
            if len(args) != 2:
                raise ValueError(f"manifest line {lineno}: expected 'frame <path> <seconds>'")
            t = float(args[1])
            if not t > 0:
                raise ValueError(f"manifest line {lineno}: exposure must be positive, got {t}")
            block["frames"].append(_resolve(base, args[0], lineno))
            block["times"].append(t)
        elif key == "ref":
            block["ref"] = int(args[0])
        elif key == "gt":
            block["gt"] = _resolve(base, args[0], lineno)
        elif key == "name":
            block["name"] = args[0]
        else:
            raise ValueError(f"manifest line {lineno}: unknown key {key!r}")
    if started:
        out.append(_finish_block(block, base, lineno, len(out)))
    return out


def write_sequence(directory, seq: ExposureSequence) -> list[str]:
    """Write frames (PPM when 8-bit exact, else PFM) and gt.pfm; return manifest lines."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"name {seq.name}"] if seq.name else []
    for i, (frame, t) in enumerate(zip(seq.frames, seq.exposure_times)):
        q = np.round(frame.astype(np.float64) * 255.0)
        exact = np.array_equal(q.astype(np.float32) / np.float32(255), frame)
        fname = f"frame_{i}.ppm" if exact else f"frame_{i}.pfm"
        (write_ppm if exact else write_pfm)(directory / fname, frame)
        lines.append(f"frame {os.path.join(directory.name, fname)} {t!r}")
    lines.append(f"ref {seq.ref_index}")
    if seq.hdr_gt is not None:
        write_pfm(directory / "gt.pfm", seq.hdr_gt)
        lines.append(f"gt {os.path.join(directory.name, 'gt.pfm')}")
    return lines


def write_dataset(out_dir, sequences) -> Path:
    """Write every sequence under ``out_dir`` plus ``out_dir/manifest.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blocks = []
    for i, seq in enumerate(sequences):
        name = seq.name or f"seq_{i:03d}"
        blocks.append("\n".join(write_sequence(out_dir / name, seq)))
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n\n".join(blocks) + ("\n" if blocks else ""))
    return manifest
