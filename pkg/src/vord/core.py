"""Foundational numeric types: images, logits, token distributions, vocabulary,
and the deterministic randomness contract shared by every module.

All types are immutable values after construction (arrays are frozen with
``writeable=False``), so they can be shared freely between threads.
Probabilities are kept in linear space throughout; masking rules elsewhere in
the package compare linear probabilities directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import VordError

__all__ = [
    "RngSeed",
    "ImageTensor",
    "LogitsVector",
    "TokenDistribution",
    "Vocabulary",
    "as_generator",
    "softmax",
    "normalize",
]

_SUM_TOL = 1e-9


def _frozen_array(values, dtype=np.float64, ndim: int | None = None) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise VordError("bad-shape", f"expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RngSeed:
    """A 64-bit seed: the single source of randomness for an experiment.

    The same seed yields bit-identical sampling, corruption, and benchmark
    generation across runs.  ``split`` derives independent child seeds so
    sub-tasks (corruption vs. sampling, query i vs. query j) never share or
    shift each other's streams.
    """

    seed: int

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise VordError("bad-seed", f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def split(self, n: int) -> tuple["RngSeed", ...]:
        """Derive ``n`` independent child seeds deterministically."""
        words = np.random.SeedSequence(self.seed).generate_state(n, dtype=np.uint64)
        return tuple(RngSeed(int(w)) for w in words)


def as_generator(rng: "RngSeed | np.random.Generator | int") -> np.random.Generator:
    """Accept a seed or an already-built generator and return a generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    return RngSeed(int(rng)).generator()


@dataclass(frozen=True)
class ImageTensor:
    """Dense H x W x C image with every pixel in [0, 1].

    Values outside the range are clamped at construction, so any arithmetic
    producing an ImageTensor re-establishes the invariant.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise VordError("bad-shape", f"image must be H x W x C, got shape {arr.shape}")
        if arr.size == 0:
            raise VordError("bad-shape", "image dimensions must be positive")
        if not np.all(np.isfinite(arr)):
            raise VordError("invalid-pixels", "image contains non-finite values")
        arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class LogitsVector:
    """Raw pre-softmax scores over the vocabulary; must be finite."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, ndim=1)
        if not np.all(np.isfinite(arr)):
            raise VordError("invalid-logits", "logits contain non-finite values")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TokenDistribution:
    """Probability vector over the vocabulary at one generation step.

    Entries are non-negative and sum to 1 (within 1e-9) unless ``masked`` is
    set, which marks the transient post-masking / pre-renormalization state.
    """

    probs: np.ndarray
    masked: bool = False

    def __post_init__(self):
        arr = _frozen_array(self.probs, ndim=1)
        if arr.size == 0:
            raise VordError("bad-shape", "distribution must be non-empty")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise VordError("invalid-distribution", "entries must be finite and non-negative")
        if not self.masked and abs(float(arr.sum()) - 1.0) > _SUM_TOL:
            raise VordError(
                "invalid-distribution",
                f"entries sum to {float(arr.sum())!r}, not 1 (pass masked=True for the "
                "unnormalized-masked state)",
            )
        object.__setattr__(self, "probs", arr)

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class Vocabulary:
    """Token id space with designated begin/end-of-sequence markers."""

    size: int
    bos_id: int
    eos_id: int
    labels: Sequence[str] | None = field(default=None)

    def __post_init__(self):
        if self.size <= 0:
            raise VordError("bad-vocab", "vocabulary size must be positive")
        if not (0 <= self.bos_id < self.size and 0 <= self.eos_id < self.size):
            raise VordError("bad-vocab", "bos/eos ids must lie inside the vocabulary")
        if self.bos_id == self.eos_id:
            raise VordError("bad-vocab", "bos and eos must be distinct tokens")
        if self.labels is not None:
            if len(self.labels) != self.size:
                raise VordError("bad-vocab", "labels must cover the whole vocabulary")
            object.__setattr__(self, "labels", tuple(self.labels))

    def label(self, token: int) -> str:
        if self.labels is not None:
            return self.labels[token]
        return f"<{token}>"


def softmax(logits: "LogitsVector | np.ndarray", temperature: float = 1.0) -> TokenDistribution:
    """Temperature softmax, stabilized by max-subtraction.

    Raises ``invalid-logits`` on non-finite inputs and ``invalid-temperature``
    on a non-positive temperature.
    """
    if not (np.isfinite(temperature) and temperature > 0):
        raise VordError("invalid-temperature", f"temperature must be positive, got {temperature}")
    if isinstance(logits, LogitsVector):
        values = logits.values
    else:
        values = np.asarray(logits, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise VordError("invalid-logits", "logits contain non-finite values")
    scaled = values / float(temperature)
    shifted = scaled - scaled.max()
    expd = np.exp(shifted)
    return TokenDistribution(expd / expd.sum())


def normalize(dist: "TokenDistribution | np.ndarray") -> TokenDistribution:
    """Rescale a non-negative vector to sum to 1.

    An all-zero vector has no normalization; callers relying on masked
    distributions must apply their fallback rule when catching
    ``empty-support``.
    """
    probs = dist.probs if isinstance(dist, TokenDistribution) else np.asarray(dist, dtype=np.float64)
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise VordError("invalid-distribution", "entries must be finite and non-negative")
    total = float(probs.sum())
    if total <= 0.0:
        raise VordError("empty-support", "cannot normalize an all-zero vector")
    return TokenDistribution(probs / total)
