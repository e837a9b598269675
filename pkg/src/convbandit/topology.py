"""Network shape descriptions and patch-window index tables.

A context is a ``channels x pixels`` matrix whose pixels carry either a 1-D
(:class:`Line`) or 2-D (:class:`Grid`) neighbourhood structure.  The patch
tables built here drive both the forward gather and its scatter-add adjoint,
so the convolution and its gradient share one source of indexing truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError

# Joint Lipschitz constants covering the activation and its derivative.
# sigmoid: sup sigma' = 1/4 and sup |sigma''| = 1/(6*sqrt(3)) < 1/4.
# softplus: sup sigma' = 1 and sup |sigma''| = 1/4 < 1.
ACTIVATION_MU = {"sigmoid": 0.25, "softplus": 1.0}


@dataclass(frozen=True)
class Line:
    """1-D pixel layout: pixel j neighbours pixels j-1 and j+1."""

    pixels: int


@dataclass(frozen=True)
class Grid:
    """2-D row-major pixel layout of height x width."""

    height: int
    width: int

    @property
    def pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class NetTopology:
    """Static shape of the convolutional reward model.

    Attributes:
        layers: number of convolutional layers (L >= 1).
        channels: channels per convolutional layer (m).
        patch: pixels per channel gathered into one patch (q); for a Grid
            this must be a perfect square k*k with k <= min(height, width).
        in_channels: channels of the input context (c).
        pixels: pixel count of the input context (p).
        spatial: Line or Grid neighbourhood structure over the pixels.
        activation: "sigmoid" or "softplus".
        lipschitz: joint Lipschitz constant of the activation and its
            derivative; filled from ACTIVATION_MU when not given.
    """

    layers: int
    channels: int
    patch: int
    in_channels: int
    pixels: int
    spatial: Line | Grid
    activation: str = "sigmoid"
    lipschitz: float | None = None

    def __post_init__(self):
        if self.layers < 1 or self.channels < 1 or self.patch < 1:
            raise ValueError("layers, channels and patch must all be >= 1")
        if self.in_channels < 1 or self.pixels < 1:
            raise ValueError("in_channels and pixels must be >= 1")
        if self.spatial.pixels != self.pixels:
            raise DimensionError(
                f"spatial layout covers {self.spatial.pixels} pixels, "
                f"topology declares {self.pixels}"
            )
        if isinstance(self.spatial, Grid):
            k = math.isqrt(self.patch)
            if k * k != self.patch:
                raise ValueError("grid patch size must be a perfect square")
            if k > min(self.spatial.height, self.spatial.width):
                raise ValueError("patch window exceeds grid extent")
        if self.activation not in ACTIVATION_MU:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", ACTIVATION_MU[self.activation])

    @property
    def param_count(self) -> int:
        """Total parameter count across all layers including the output."""
        m, q, c, p = self.channels, self.patch, self.in_channels, self.pixels
        return m * q * c + (self.layers - 1) * m * q * m + m * p

    def layer_width(self, layer: int) -> int:
        """Columns of the weight matrix at 1-based convolutional layer."""
        if layer == 1:
            return self.patch * self.in_channels
        return self.patch * self.channels

    def with_channels(self, channels: int) -> "NetTopology":
        """Same shape with a different channel count (width sweeps)."""
        return NetTopology(
            layers=self.layers,
            channels=channels,
            patch=self.patch,
            in_channels=self.in_channels,
            pixels=self.pixels,
            spatial=self.spatial,
            activation=self.activation,
        )


@lru_cache(maxsize=64)
def patch_tables(spatial: Line | Grid, patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Gather and scatter index tables for one (spatial, patch) pair.

    Returns (gather, scatter), both of shape (patch, pixels) with entries in
    [0, pixels]; the value ``pixels`` addresses an implicit zero slot.

    gather[a, j]  = source pixel feeding window slot a of the patch at pixel j
    scatter[a, j] = patch column whose slot a reads pixel j (adjoint of gather)
    """
    p = spatial.pixels
    gather = np.full((patch, p), p, dtype=np.intp)
    if isinstance(spatial, Line):
        # Window anchored floor((q-1)/2) to the left; centred for odd q.
        lead = (patch - 1) // 2
        for a in range(patch):
            src = np.arange(p) + (a - lead)
            ok = (src >= 0) & (src < p)
            gather[a, ok] = src[ok]
    else:
        k = math.isqrt(patch)
        lead = (k - 1) // 2
        rows, cols = np.divmod(np.arange(p), spatial.width)
        for a in range(patch):
            dr, dc = a // k - lead, a % k - lead
            r, c = rows + dr, cols + dc
            ok = (r >= 0) & (r < spatial.height) & (c >= 0) & (c < spatial.width)
            gather[a, ok] = (r * spatial.width + c)[ok]

    scatter = np.full((patch, p), p, dtype=np.intp)
    for a in range(patch):
        valid = gather[a] != p
        scatter[a, gather[a, valid]] = np.arange(p)[valid]
    gather.setflags(write=False)
    scatter.setflags(write=False)
    return gather, scatter


def extract_patches(h: np.ndarray, topology: NetTopology) -> np.ndarray:
    """Stack the zero-padded, stride-1 patch of every pixel into columns.

    ``h`` has shape (channels, pixels); the result has shape
    (patch * channels, pixels) with channel blocks stacked in channel order.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != topology.pixels:
        raise DimensionError(
            f"expected (channels, {topology.pixels}) input, got {h.shape}"
        )
    gather, _ = patch_tables(topology.spatial, topology.patch)
    return gather_patches(h, gather)


def gather_patches(h: np.ndarray, gather: np.ndarray) -> np.ndarray:
    """Apply the patch gather to (..., channels, pixels) arrays."""
    q, p = gather.shape
    pad = np.zeros((*h.shape[:-1], 1), dtype=h.dtype)
    hext = np.concatenate([h, pad], axis=-1)
    patches = hext[..., gather]  # (..., channels, q, p)
    return patches.reshape(*h.shape[:-2], h.shape[-2] * q, p)


def scatter_patches(v: np.ndarray, scatter: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`gather_patches` (scatter-add back onto pixels)."""
    q, p = scatter.shape
    channels = v.shape[-2] // q
    v4 = v.reshape(*v.shape[:-2], channels, q, p)
    pad = np.zeros((*v4.shape[:-1], 1), dtype=v.dtype)
    v4ext = np.concatenate([v4, pad], axis=-1)
    rows = np.arange(q)[:, None]
    return v4ext[..., rows, scatter].sum(axis=-2)
