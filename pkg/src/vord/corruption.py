"""Image corruptions used to build the modified input: mixup, forward-diffusion
noise, and a small set of common photometric corruptions.

Every operation returns a same-shaped image with all pixels clamped back to
[0, 1], and every stochastic operation is a pure function of its inputs plus
the supplied seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import ImageTensor, RngSeed, as_generator
from .errors import VordError

__all__ = [
    "CORRUPTION_KINDS",
    "CorruptionSpec",
    "mixup",
    "sample_lambda",
    "diffusion_noise",
    "common_corruption",
    "corrupt",
]

CORRUPTION_KINDS = ("mixup", "diffusion", "gaussian_noise", "contrast", "brightness")


@dataclass(frozen=True)
class CorruptionSpec:
    """Configuration for producing the modified image.

    ``fixed_lambda`` pins the mixup coefficient instead of drawing it from
    Beta(alpha, alpha); lambda=1 makes the corruption an exact identity,
    which the reduction checks rely on.  ``resample_per_step`` re-corrupts
    the image at every generation step instead of once per sequence.
    """

    kind: str = "mixup"
    alpha: float = 1.0
    gamma: float = 0.5
    severity: float = 0.1
    partner_selection: str = "provided"
    fixed_lambda: float | None = None
    resample_per_step: bool = False

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise VordError("unknown-corruption", f"unknown corruption kind {self.kind!r}")
        if self.kind == "mixup" and not self.alpha > 0:
            raise VordError("bad-corruption", "mixup requires alpha > 0")
        if self.kind == "diffusion" and not (0.0 < self.gamma < 1.0):
            raise VordError("bad-corruption", "diffusion requires gamma in (0, 1)")
        if self.severity < 0:
            raise VordError("bad-corruption", "severity must be >= 0")
        if self.partner_selection not in ("provided", "shuffled_batch"):
            raise VordError("bad-corruption", f"bad partner_selection {self.partner_selection!r}")
        if self.fixed_lambda is not None and not (0.0 <= self.fixed_lambda <= 1.0):
            raise VordError("bad-corruption", "fixed_lambda must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        out: dict = {
            "kind": self.kind,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "severity": self.severity,
            "partner_selection": self.partner_selection,
        }
        if self.fixed_lambda is not None:
            out["fixed_lambda"] = self.fixed_lambda
        if self.resample_per_step:
            out["resample_per_step"] = True
        return out

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "CorruptionSpec":
        allowed = {
            "kind", "alpha", "gamma", "severity", "partner_selection",
            "fixed_lambda", "resample_per_step",
        }
        unknown = set(doc) - allowed
        if unknown:
            raise VordError("unknown-key", f"unknown corruption keys: {sorted(unknown)}")
        return cls(**dict(doc))


def mixup(v_i: ImageTensor, v_j: ImageTensor, lam: float) -> ImageTensor:
    """Convex pixel combination lam*v_i + (1-lam)*v_j."""
    if v_i.shape != v_j.shape:
        raise VordError("shape-mismatch", f"cannot mix shapes {v_i.shape} and {v_j.shape}")
    if not (0.0 <= lam <= 1.0):
        raise VordError("bad-corruption", f"lambda must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return v_i
    if lam == 0.0:
        return v_j
    return ImageTensor(lam * v_i.data + (1.0 - lam) * v_j.data)


def sample_lambda(alpha: float, rng: "RngSeed | np.random.Generator") -> float:
    """Draw the mixup coefficient from Beta(alpha, alpha) via two Gamma draws."""
    if not alpha > 0:
        raise VordError("bad-corruption", "alpha must be positive")
    gen = as_generator(rng)
    a = gen.gamma(alpha)
    b = gen.gamma(alpha)
    return float(a / (a + b))


def diffusion_noise(v: ImageTensor, gamma: float, rng: "RngSeed | np.random.Generator") -> ImageTensor:
    """One forward-diffusion step: sqrt(1-gamma)*v + sqrt(gamma)*eps, clamped."""
    if not (0.0 < gamma < 1.0):
        raise VordError("bad-corruption", f"gamma must lie in (0, 1), got {gamma}")
    gen = as_generator(rng)
    eps = gen.standard_normal(v.shape)
    return ImageTensor(np.sqrt(1.0 - gamma) * v.data + np.sqrt(gamma) * eps)


def common_corruption(
    v: ImageTensor,
    kind: str,
    severity: float,
    rng: "RngSeed | np.random.Generator | None" = None,
) -> ImageTensor:
    """Photometric corruptions: additive Gaussian noise, contrast, brightness."""
    if severity < 0:
        raise VordError("bad-corruption", "severity must be >= 0")
    if kind == "gaussian_noise":
        if rng is None:
            raise VordError("bad-corruption", "gaussian_noise requires an rng")
        gen = as_generator(rng)
        return ImageTensor(v.data + gen.normal(0.0, severity, size=v.shape))
    if kind == "contrast":
        mean = v.data.mean()
        return ImageTensor((v.data - mean) * (1.0 - severity) + mean)
    if kind == "brightness":
        if severity == 0.0:
            return v
        return ImageTensor(v.data + severity)
    raise VordError("unknown-corruption", f"unknown corruption kind {kind!r}")


def corrupt(
    v: ImageTensor,
    spec: CorruptionSpec,
    rng: "RngSeed | np.random.Generator",
    partner: ImageTensor | None = None,
) -> ImageTensor:
    """Apply the configured corruption to ``v``.

    Mixup needs a partner image; batch runners pass a seeded permutation
    partner, single-image callers supply one explicitly.
    """
    gen = as_generator(rng)
    if spec.kind == "mixup":
        if partner is None:
            raise VordError("missing-partner", "mixup corruption requires a partner image")
        lam = spec.fixed_lambda if spec.fixed_lambda is not None else sample_lambda(spec.alpha, gen)
        return mixup(v, partner, lam)
    if spec.kind == "diffusion":
        return diffusion_noise(v, spec.gamma, gen)
    return common_corruption(v, spec.kind, spec.severity, gen)
