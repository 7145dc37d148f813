"""Synthetic moving-shape clips whose labels require temporal order, plus
the binary dataset file format.

Eight classes: {square, diamond} x {right, left, down, up}.  A left clip is
the exact frame reversal of a right clip (same for up/down), so any model
that sees frames as an unordered set is information-theoretically at chance
within each direction pair.

Position sampling is built so a single frame is uninformative about
direction: along the motion axis the shape visits start + speed*t, and the
perpendicular coordinate is independently redrawn each frame from the same
start + speed*k grid.  Every direction class therefore shares one per-frame
position marginal; only the order of frames differs.

Randomness is a counter-based splitmix64 stream: generation is exactly
reproducible across platforms and trivially parallel per sample.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

N_CLASSES = 8
SHAPES = ("square", "diamond")
DIRECTIONS = ("right", "left", "down", "up")

_MAGIC = b"ILAV"
_VERSION = 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM = np.uint64(0xD1B54A32D192ED03)


class InfeasibleSpec(ValueError):
    """The shape cannot stay in-bounds for all frames."""


class CorruptFile(ValueError):
    """Dataset bytes fail structural validation."""


@dataclass
class SynthTaskSpec:
    frames: int = 4
    height: int = 32
    width: int = 32
    shape_px: int = 7  # odd side/diameter of the drawn shape
    speed: int = 3     # pixels per frame along the motion axis
    noise: float = 0.05
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return N_CLASSES

    @property
    def half(self) -> int:
        return self.shape_px // 2

    @property
    def span(self) -> int:
        return self.speed * (self.frames - 1)

    def validate(self) -> None:
        if self.frames < 2:
            raise InfeasibleSpec(f"need at least 2 frames, got {self.frames}")
        if self.shape_px < 1 or self.shape_px % 2 == 0:
            raise InfeasibleSpec(f"shape_px must be odd and positive, got {self.shape_px}")
        if self.speed < 1:
            raise InfeasibleSpec(f"speed must be at least 1, got {self.speed}")
        if self.noise < 0:
            raise InfeasibleSpec(f"noise must be non-negative, got {self.noise}")
        for name, extent in (("width", self.width), ("height", self.height)):
            if extent - 1 - 2 * self.half - self.span < 0:
                raise InfeasibleSpec(
                    f"shape of size {self.shape_px} moving {self.span}px cannot stay "
                    f"inside {name} {extent}")


# ---------------------------------------------------------------------------
# Counter-based splitmix64


def _mix(z: np.ndarray) -> np.ndarray:
    # Modular 64-bit wraparound is the algorithm, not an error.
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def sample_key(seed: int, index: int) -> np.uint64:
    with np.errstate(over="ignore"):
        return _mix(np.uint64(seed) * _STREAM + np.uint64(index) * _GOLDEN)


def uniforms(key: np.uint64, count: int) -> np.ndarray:
    """`count` doubles in [0, 1) from the stream at `key`."""
    with np.errstate(over="ignore"):
        ks = key + (np.arange(1, count + 1, dtype=np.uint64)) * _STREAM
    return (_mix(ks) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def _ints(u: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Map uniforms to integers in [lo, hi]."""
    return lo + np.minimum((u * (hi - lo + 1)).astype(np.int64), hi - lo)


def _normals(u: np.ndarray) -> np.ndarray:
    """Box-Muller on consecutive uniform pairs; len(u) must be even."""
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])


# ---------------------------------------------------------------------------
# Clip synthesis


def _stencil(shape_px: int, kind: str) -> np.ndarray:
    h = shape_px // 2
    if kind == "square":
        return np.ones((shape_px, shape_px), dtype=bool)
    di, dj = np.meshgrid(np.arange(-h, h + 1), np.arange(-h, h + 1), indexing="ij")
    return np.abs(di) + np.abs(dj) <= h


def generate_clip(spec: SynthTaskSpec, label: int, key: np.uint64) -> np.ndarray:
    """One (T, H, W, 3) u8 clip for `label` from the stream at `key`."""
    spec.validate()
    if not 0 <= label < N_CLASSES:
        raise ValueError(f"label {label} outside 0..{N_CLASSES - 1}")
    shape_kind = SHAPES[label // 4]
    direction = DIRECTIONS[label % 4]
    T, H, W = spec.frames, spec.height, spec.width
    half, speed = spec.half, spec.speed
    vertical = direction in ("down", "up")
    reverse = direction in ("left", "up")

    n_pixels = T * H * W * 3
    n_noise = n_pixels + (n_pixels % 2)
    u = uniforms(key, 2 + T + (n_noise if spec.noise > 0 else 0))

    main_extent = H if vertical else W
    perp_extent = W if vertical else H
    main0 = int(_ints(u[0:1], half, main_extent - 1 - half - spec.span)[0])
    perp0 = int(_ints(u[1:2], half, perp_extent - 1 - half - spec.span)[0])
    # Perpendicular coordinate hops on the same grid the motion axis walks,
    # giving all direction classes one per-frame position marginal.
    perp_steps = _ints(u[2 : 2 + T], 0, T - 1)

    canvas = np.zeros((T, H, W), dtype=np.float64)
    stencil = _stencil(spec.shape_px, shape_kind)
    for t in range(T):
        main = main0 + speed * t
        perp = perp0 + speed * int(perp_steps[t])
        cy, cx = (main, perp) if vertical else (perp, main)
        window = canvas[t, cy - half : cy + half + 1, cx - half : cx + half + 1]
        window[stencil] = 1.0

    frames = np.repeat(canvas[..., None], 3, axis=-1)
    if spec.noise > 0:
        noise = _normals(u[2 + T :])[:n_pixels].reshape(T, H, W, 3)
        frames = np.clip(frames + spec.noise * noise, 0.0, 1.0)
    clip = np.round(frames * 255.0).astype(np.uint8)
    if reverse:
        clip = clip[::-1].copy()
    return clip


def generate(spec: SynthTaskSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """n samples: (labels u16 (n,), clips u8 (n, T, H, W, 3)).

    Labels cycle 0..7 so classes stay balanced within one sample.
    """
    spec.validate()
    if n < 1:
        raise ValueError("need at least one sample")
    labels = (np.arange(n) % N_CLASSES).astype(np.uint16)
    clips = np.empty((n, spec.frames, spec.height, spec.width, 3), dtype=np.uint8)
    for i in range(n):
        clips[i] = generate_clip(spec, int(labels[i]), sample_key(spec.seed, i))
    return labels, clips


def to_float(clips: np.ndarray, dtype=np.float64) -> np.ndarray:
    return clips.astype(dtype) / np.array(255.0, dtype=dtype)


# ---------------------------------------------------------------------------
# Dataset file I/O

_HEADER = struct.Struct("<4sHIIIII")  # magic, version, n, num_classes, T, H, W


def encode_dataset(labels: np.ndarray, clips: np.ndarray,
                   num_classes: int = N_CLASSES) -> bytes:
    n, T, H, W, C = clips.shape
    if C != 3 or labels.shape != (n,):
        raise ValueError(f"bad dataset arrays: labels {labels.shape}, clips {clips.shape}")
    sample_bytes = T * H * W * 3
    body = np.empty((n, 2 + sample_bytes), dtype=np.uint8)
    body[:, :2] = labels.astype("<u2").view(np.uint8).reshape(n, 2)
    body[:, 2:] = clips.reshape(n, sample_bytes)
    return _HEADER.pack(_MAGIC, _VERSION, n, num_classes, T, H, W) + body.tobytes()


def write_dataset(path, labels: np.ndarray, clips: np.ndarray,
                  num_classes: int = N_CLASSES) -> None:
    blob = encode_dataset(labels, clips, num_classes)
    with open(path, "wb") as f:
        f.write(blob)


@dataclass
class DatasetMeta:
    n: int
    num_classes: int
    frames: int
    height: int
    width: int


def read_dataset(path) -> tuple[np.ndarray, np.ndarray, DatasetMeta]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise CorruptFile("file shorter than header")
    magic, version, n, num_classes, T, H, W = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise CorruptFile(f"bad magic {magic!r}")
    if version != _VERSION:
        raise CorruptFile(f"unsupported version {version}")
    sample_bytes = T * H * W * 3
    want = _HEADER.size + n * (2 + sample_bytes)
    if len(raw) != want:
        raise CorruptFile(f"file is {len(raw)} bytes, layout requires {want}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size).reshape(n, 2 + sample_bytes)
    labels = body[:, :2].copy().view("<u2").reshape(n)
    if n and labels.max() >= num_classes:
        raise CorruptFile("label outside declared class count")
    clips = body[:, 2:].reshape(n, T, H, W, 3).copy()
    return labels.astype(np.uint16), clips, DatasetMeta(n, num_classes, T, H, W)


def bytes_hash(blob: bytes) -> str:
    """Git-style blob hash (sha1 over a length-prefixed header + bytes)."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(blob))
    h.update(blob)
    return h.hexdigest()


def content_hash(path) -> str:
    """Git-style blob hash of the file bytes."""
    with open(path, "rb") as f:
        data = f.read()
    return bytes_hash(data)
