"""Visual encoder abstraction, token pooling, and the adaptive penalty margin.

The margin measures how far a corruption moved the image in embedding space:
the angle between the mean-pooled clean and modified token embeddings,
normalized to [0, 1] by pi radians.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .core import ImageTensor, RngSeed
from .errors import VordError

__all__ = ["VisualEmbedding", "VisualEncoder", "ToyPatchEncoder", "mean_pool", "adaptive_margin"]


@dataclass(frozen=True)
class VisualEmbedding:
    """N visual tokens of dimension D, as an (N, D) array."""

    tokens: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.tokens, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise VordError("bad-shape", f"embedding must be (N, D) with N >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise VordError("bad-embedding", "embedding contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "tokens", arr)

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


class VisualEncoder(abc.ABC):
    """Deterministic map from an image to a token-sequence embedding."""

    @abc.abstractmethod
    def encode(self, image: ImageTensor) -> VisualEmbedding: ...


class ToyPatchEncoder(VisualEncoder):
    """Desk-scale encoder: non-overlapping patches, mean-centered, through a
    fixed seeded Gaussian projection.

    Linear in the pixels, so embeddings move smoothly with pixel changes,
    which the adaptive margin requires.  Per-patch mean centering (the usual
    input normalization) makes the embedding insensitive to global
    brightness, so the margin responds to structural change rather than
    photometric shifts.  Image height and width must be divisible by
    ``patch_size``.
    """

    def __init__(
        self,
        patch_size: int,
        channels: int,
        dim: int,
        seed: "RngSeed | int" = 0,
        center_patches: bool = True,
    ):
        if patch_size < 1 or channels < 1 or dim < 1:
            raise VordError("bad-encoder", "patch_size, channels, and dim must be positive")
        seed = seed if isinstance(seed, RngSeed) else RngSeed(seed)
        self.patch_size = patch_size
        self.channels = channels
        self.dim = dim
        self.seed = seed
        self.center_patches = center_patches
        flat = patch_size * patch_size * channels
        proj = seed.generator().standard_normal((dim, flat)) / np.sqrt(flat)
        proj.setflags(write=False)
        self.projection = proj

    def encode(self, image: ImageTensor) -> VisualEmbedding:
        p = self.patch_size
        h, w, c = image.shape
        if c != self.channels:
            raise VordError("bad-shape", f"encoder expects {self.channels} channels, image has {c}")
        if h % p or w % p:
            raise VordError("bad-shape", f"image {h}x{w} not divisible by patch size {p}")
        grid = image.data.reshape(h // p, p, w // p, p, c)
        patches = grid.transpose(0, 2, 1, 3, 4).reshape(-1, p * p * c)
        if self.center_patches:
            patches = patches - patches.mean(axis=1, keepdims=True)
        return VisualEmbedding(patches @ self.projection.T)


def mean_pool(e: VisualEmbedding) -> np.ndarray:
    """Arithmetic mean over the token axis."""
    return e.tokens.mean(axis=0)


def adaptive_margin(e_clean: VisualEmbedding, e_mod: VisualEmbedding) -> float:
    """Angular distance between mean-pooled embeddings, in [0, 1].

    arccos of the cosine similarity, normalized by pi.  The cosine argument
    is clamped to [-1, 1] first; identical or exactly opposite pooled vectors
    short-circuit so the margin is exactly 0 or 1 rather than arccos of a
    rounded dot product.
    """
    if e_clean.dim != e_mod.dim:
        raise VordError("shape-mismatch", f"embedding dims differ: {e_clean.dim} vs {e_mod.dim}")
    a = mean_pool(e_clean)
    b = mean_pool(e_mod)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise VordError("degenerate-embedding", "pooled embedding has zero norm")
    if np.array_equal(a, b):
        return 0.0
    if np.array_equal(a, -b):
        return 1.0
    cos = float(np.dot(a, b) / (na * nb))
    cos = min(1.0, max(-1.0, cos))
    return float(np.arccos(cos) / np.pi)
