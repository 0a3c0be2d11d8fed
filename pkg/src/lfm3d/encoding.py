"""3D-signal lookup, positional encoding, and 3D-infused keypoint embeddings.

The keypoint embedding is the sum of the raw descriptor, an MLP on the
normalized 2D position + confidence, and (optionally) an MLP on the per-keypoint
3D signal, either raw or lifted through a sinusoidal positional encoding.
Summation keeps the 3D branch strictly additive: with a zero-output 3D MLP the
embedding equals the 2D-only one bit for bit, which is what makes staged
training (2D pretrain, then 3D finetune) start from the pretrained function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InvalidConfig, OutOfBounds, ShapeMismatch

ENCODE_MODES = ("2d-only", "3d-raw", "3d-pe")


@dataclass
class DenseMap3D:
    """Per-pixel 3D signal: V=3 normalized object coordinates or V=1 inverse depth."""

    values: np.ndarray  # (H, W, V) float32
    mask: np.ndarray  # (H, W) bool, True where the signal is valid
    fill_value: float = 0.0  # value carried by off-mask pixels

    def __post_init__(self):
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.shape[:2] != self.mask.shape:
            raise ShapeMismatch(
                f"map {self.values.shape} and mask {self.mask.shape} disagree"
            )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def sample_map_bilinear(map3d: DenseMap3D, xy: np.ndarray) -> np.ndarray:
    """Bilinear lookup at (n,2) or (2,) pixel coordinates; exact at integer pixels.

    Coordinates must lie in [0, W-1] x [0, H-1]; raises OutOfBounds otherwise.
    """
    xy = np.asarray(xy, dtype=np.float64)
    single = xy.ndim == 1
    pts = xy.reshape(-1, 2)
    h, w = map3d.height, map3d.width
    x, y = pts[:, 0], pts[:, 1]
    if (x < 0).any() or (x > w - 1).any() or (y < 0).any() or (y > h - 1).any():
        raise OutOfBounds("lookup coordinates outside [0, W-1] x [0, H-1]")
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2) if w > 1 else np.zeros(len(x), np.int64)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2) if h > 1 else np.zeros(len(y), np.int64)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    v = map3d.values
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    out = (
        v[y0, x0] * (1 - fx) * (1 - fy)
        + v[y0, x1] * fx * (1 - fy)
        + v[y1, x0] * (1 - fx) * fy
        + v[y1, x1] * fx * fy
    )
    return out[0] if single else out


def min_max_normalize_map(map3d: DenseMap3D) -> DenseMap3D:
    """Rescale on-mask values of a V=1 map to [0,1]; off-mask pixels become 0."""
    values = map3d.values.astype(np.float32)
    out = np.zeros_like(values)
    if map3d.mask.any():
        on = values[map3d.mask]
        lo, hi = float(on.min()), float(on.max())
        span = hi - lo if hi > lo else 1.0
        out[map3d.mask] = (values[map3d.mask] - lo) / span
    return DenseMap3D(values=out, mask=map3d.mask, fill_value=0.0)


def lookup_keypoint_signals(map3d: DenseMap3D, xy: np.ndarray, kind: str) -> np.ndarray:
    """Per-keypoint 3D signal: bilinear NOCS lookup, or min-max-normalized inverse depth."""
    if kind == "nocs":
        return sample_map_bilinear(map3d, xy).astype(np.float32)
    if kind == "mde":
        return sample_map_bilinear(min_max_normalize_map(map3d), xy).astype(np.float32)
    raise InvalidConfig(f"unknown signal kind {kind!r}")


def positional_encode(signal: torch.Tensor, frequencies: int) -> torch.Tensor:
    """Sinusoidal lift of a (..., V) signal to (..., 2 * frequencies * V).

    For each component p and k = 0..frequencies-1 emits sin(2^k pi p) and
    cos(2^k pi p), ordered component-major then frequency-major.
    """
    if frequencies < 1:
        raise InvalidConfig("need at least one frequency")
    if not torch.is_tensor(signal):
        signal = torch.as_tensor(signal, dtype=torch.float32)
    freqs = (2.0 ** torch.arange(frequencies, dtype=signal.dtype, device=signal.device)) * math.pi
    ang = signal.unsqueeze(-1) * freqs  # (..., V, L)
    enc = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)  # (..., V, L, 2)
    return enc.flatten(-3)


def normalize_positions(xy: np.ndarray, confidence: np.ndarray, width: int, height: int) -> np.ndarray:
    """Map pixel coordinates to [-1, 1] by the larger image half-extent; confidence raw."""
    half = max(width, height) / 2.0
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    out = np.stack(
        [(xy[:, 0] - cx) / half, (xy[:, 1] - cy) / half, confidence], axis=1
    )
    return out.astype(np.float32)


def build_mlp(widths: list[int]) -> nn.Sequential:
    """Linear stack with channel-wise LayerNorm + ReLU on hidden layers, plain output."""
    layers: list[nn.Module] = []
    for i in range(1, len(widths)):
        layers.append(nn.Linear(widths[i - 1], widths[i]))
        if i < len(widths) - 1:
            layers.append(nn.LayerNorm(widths[i]))
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


@dataclass
class EncoderConfig:
    descriptor_dim: int = 64  # D
    signal_dim: int = 3  # V: 3 for NOCS, 1 for inverse depth
    pe_frequencies: int = 10  # L
    use_3d: bool = False
    use_pe: bool = True
    mlp2d_widths: tuple[int, ...] = (32, 64, 128, 256)
    mlp3d_widths: tuple[int, ...] = (64, 64, 128, 128)

    @property
    def mode(self) -> str:
        if not self.use_3d:
            return "2d-only"
        return "3d-pe" if self.use_pe else "3d-raw"

    @property
    def mlp3d_input_dim(self) -> int:
        if self.use_pe:
            return 2 * self.pe_frequencies * self.signal_dim
        return self.signal_dim


class KeypointEncoder(nn.Module):
    """Builds matching embeddings d + MLP_2d(p) [+ MLP_3d(PE(n)) or MLP_3d(n)].

    The final layer of the 3D MLP is zero-initialized so a freshly added 3D
    branch leaves the embedding untouched until it is trained.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.mlp2d = build_mlp([3, *cfg.mlp2d_widths, cfg.descriptor_dim])
        if cfg.use_3d:
            self.mlp3d = build_mlp([cfg.mlp3d_input_dim, *cfg.mlp3d_widths, cfg.descriptor_dim])
            last = self.mlp3d[-1]
            nn.init.zeros_(last.weight)
            nn.init.zeros_(last.bias)
        else:
            self.mlp3d = None

    def forward(
        self,
        descriptors: torch.Tensor,  # (..., K, D)
        positions: torch.Tensor,  # (..., K, 3) normalized (x, y, c)
        signal: torch.Tensor | None = None,  # (..., K, V)
        mode: str | None = None,
    ) -> torch.Tensor:
        mode = mode or self.cfg.mode
        return encode_keypoints(descriptors, positions, signal, self, mode)


def encode_keypoints(
    descriptors: torch.Tensor,
    positions: torch.Tensor,
    signal: torch.Tensor | None,
    encoder: KeypointEncoder,
    mode: str,
) -> torch.Tensor:
    """Compute keypoint embeddings under one of the ENCODE_MODES.

    Positions must already be normalized (see normalize_positions). In the 3D
    modes a (..., K, V) signal is required; the embedding is the elementwise sum
    of the descriptor and the MLP outputs, never a concatenation.
    """
    if mode not in ENCODE_MODES:
        raise InvalidConfig(f"unknown encode mode {mode!r}")
    cfg = encoder.cfg
    if descriptors.shape[-1] != cfg.descriptor_dim:
        raise ShapeMismatch(
            f"descriptor dim {descriptors.shape[-1]} != configured {cfg.descriptor_dim}"
        )
    if positions.shape[-1] != 3 or positions.shape[:-1] != descriptors.shape[:-1]:
        raise ShapeMismatch("positions must be (..., K, 3) aligned with descriptors")
    emb = descriptors + encoder.mlp2d(positions)
    if mode == "2d-only":
        return emb
    if encoder.mlp3d is None:
        raise ShapeMismatch("encoder has no 3D branch but a 3D mode was requested")
    if signal is None:
        raise ShapeMismatch(f"mode {mode!r} requires a 3D signal")
    if signal.shape[-1] != cfg.signal_dim or signal.shape[:-1] != descriptors.shape[:-1]:
        raise ShapeMismatch(
            f"signal shape {tuple(signal.shape)} incompatible with V={cfg.signal_dim}"
        )
    if mode == "3d-pe":
        if not cfg.use_pe:
            raise ShapeMismatch("encoder 3D branch was built for raw signals, not PE")
        feats = positional_encode(signal, cfg.pe_frequencies)
    else:
        if cfg.use_pe:
            raise ShapeMismatch("encoder 3D branch was built for PE inputs, not raw")
        feats = signal
    return emb + encoder.mlp3d(feats)
