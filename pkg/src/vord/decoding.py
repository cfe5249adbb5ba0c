"""Ordinal contrastive decoding: per-token acceptance mask, adaptive
plausibility truncation, sampling strategies, and the generation loop.

At every step the engine holds two next-token distributions, one conditioned
on the clean image and one on a corrupted copy.  A token survives when its
clean probability plus the margin is at least its corrupted probability
(ordinal acceptance) and its clean probability clears the adaptive
plausibility threshold; surviving probabilities are renormalized before
sampling.  If the two masks together empty the support, the engine falls
back to the plausibility-masked clean distribution so generation always
makes progress, and records that it did so.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    ImageTensor,
    LogitsVector,
    RngSeed,
    TokenDistribution,
    Vocabulary,
    as_generator,
    normalize,
    softmax,
)
from .corruption import CorruptionSpec, corrupt
from .errors import VordError
from .vision import VisualEmbedding, VisualEncoder, adaptive_margin

__all__ = [
    "ConditionalModel",
    "DecodeConfig",
    "StepOutcome",
    "StepRecord",
    "GenerationTrace",
    "ordinal_mask",
    "plausibility_set",
    "vord_step",
    "sample",
    "generate",
]

STRATEGIES = ("greedy", "multinomial", "top_k", "nucleus")


class ConditionalModel(abc.ABC):
    """Queryable next-token scorer conditioned on visual context and text."""

    @property
    @abc.abstractmethod
    def vocabulary(self) -> Vocabulary: ...

    @abc.abstractmethod
    def next_token_logits(
        self,
        visual: VisualEmbedding,
        prompt: Sequence[int],
        prefix: Sequence[int],
    ) -> LogitsVector: ...


@dataclass(frozen=True)
class DecodeConfig:
    """Decoding hyperparameters.

    ``margin`` is either the string "adaptive" (angular distance between the
    clean and corrupted embeddings, recomputed per image pair) or a fixed
    float in [0, 1]; fixed values above 1 are capped at 1 since probabilities
    never differ by more.  ``strategy`` picks how the final distribution is
    reduced to a token; ``top_k``/``top_p`` only apply to their strategies.
    """

    beta: float = 0.2
    margin: "float | str" = "adaptive"
    temperature: float = 1.0
    strategy: str = "multinomial"
    top_k: int | None = None
    top_p: float = 1.0
    max_new_tokens: int = 64
    vord_enabled: bool = True

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise VordError("bad-config", f"beta must lie in [0, 1], got {self.beta}")
        if isinstance(self.margin, str):
            if self.margin != "adaptive":
                raise VordError("bad-config", f"margin must be 'adaptive' or a float, got {self.margin!r}")
        else:
            m = float(self.margin)
            if not np.isfinite(m) or m < 0.0:
                raise VordError("bad-config", f"fixed margin must be >= 0, got {self.margin}")
            object.__setattr__(self, "margin", min(m, 1.0))
        if not self.temperature > 0:
            raise VordError("bad-config", f"temperature must be positive, got {self.temperature}")
        if self.strategy not in STRATEGIES:
            raise VordError("bad-config", f"unknown strategy {self.strategy!r}")
        if self.strategy == "top_k" and (self.top_k is None or self.top_k < 1):
            raise VordError("bad-config", "top_k strategy requires top_k >= 1")
        if not (0.0 < self.top_p <= 1.0):
            raise VordError("bad-config", f"top_p must lie in (0, 1], got {self.top_p}")
        if self.max_new_tokens < 1:
            raise VordError("bad-config", "max_new_tokens must be positive")

    def to_json_dict(self) -> dict:
        out: dict = {
            "beta": self.beta,
            "margin": self.margin,
            "temperature": self.temperature,
            "strategy": self.strategy,
            "top_p": self.top_p,
            "max_new_tokens": self.max_new_tokens,
            "vord_enabled": self.vord_enabled,
        }
        if self.top_k is not None:
            out["top_k"] = self.top_k
        return out

    @classmethod
    def from_json_dict(cls, doc) -> "DecodeConfig":
        allowed = {
            "beta", "margin", "temperature", "strategy", "top_k", "top_p",
            "max_new_tokens", "vord_enabled",
        }
        unknown = set(doc) - allowed
        if unknown:
            raise VordError("unknown-key", f"unknown decode keys: {sorted(unknown)}")
        return cls(**dict(doc))


@dataclass(frozen=True)
class StepOutcome:
    """Masks and final distribution produced by one decoding-rule application."""

    final_dist: TokenDistribution
    ordinal_mask: np.ndarray
    plausible_set: np.ndarray
    fallback_used: bool


@dataclass(frozen=True)
class StepRecord:
    """Full audit record of one generation step."""

    step: int
    p_clean: TokenDistribution
    p_mod: TokenDistribution
    margin: float
    ordinal_mask: np.ndarray
    plausible_set: np.ndarray
    final_dist: TokenDistribution
    chosen: int
    fallback_used: bool

    def __post_init__(self):
        if not (self.fallback_used or self.final_dist.probs[self.chosen] > 0):
            raise VordError("bad-record", "chosen token has zero probability without fallback")


@dataclass(frozen=True)
class GenerationTrace:
    """Per-step records plus the emitted token sequence."""

    records: tuple[StepRecord, ...]
    tokens: tuple[int, ...]
    terminated_by: str  # "eos" | "max_len"

    def __post_init__(self):
        if len(self.records) != len(self.tokens):
            raise VordError("bad-record", "one record per emitted token required")

    def fallback_count(self) -> int:
        return sum(r.fallback_used for r in self.records)

    def to_json_dict(self, full_distributions: bool = False, elide_above: int = 256) -> dict:
        """JSON form of the trace.

        Per-step vectors are dropped for vocabularies larger than
        ``elide_above`` unless ``full_distributions`` is set, to bound file
        size.
        """
        steps = []
        for r in self.records:
            entry: dict = {
                "step": r.step,
                "margin": r.margin,
                "chosen": r.chosen,
                "fallback_used": r.fallback_used,
            }
            if full_distributions or len(r.final_dist) <= elide_above:
                entry["p_clean"] = r.p_clean.probs.tolist()
                entry["p_mod"] = r.p_mod.probs.tolist()
                entry["final_dist"] = r.final_dist.probs.tolist()
                entry["ordinal_mask"] = [bool(x) for x in r.ordinal_mask]
                entry["plausible_set"] = [bool(x) for x in r.plausible_set]
            steps.append(entry)
        return {
            "tokens": list(self.tokens),
            "terminated_by": self.terminated_by,
            "fallback_count": self.fallback_count(),
            "steps": steps,
        }


def _probs(dist: "TokenDistribution | np.ndarray") -> np.ndarray:
    return dist.probs if isinstance(dist, TokenDistribution) else np.asarray(dist, dtype=np.float64)


def ordinal_mask(
    p_clean: "TokenDistribution | np.ndarray",
    p_mod: "TokenDistribution | np.ndarray",
    m: float,
) -> np.ndarray:
    """Accept token t iff p_clean[t] + m >= p_mod[t]."""
    a = _probs(p_clean)
    b = _probs(p_mod)
    if a.shape != b.shape:
        raise VordError("vocab-mismatch", f"distribution lengths differ: {a.shape} vs {b.shape}")
    return a + m >= b


def plausibility_set(p_clean: "TokenDistribution | np.ndarray", beta: float) -> np.ndarray:
    """Keep token t iff p_clean[t] >= beta * max(p_clean)."""
    a = _probs(p_clean)
    return a >= beta * a.max()


def vord_step(
    p_clean: TokenDistribution,
    p_mod: TokenDistribution,
    m: float,
    beta: float,
) -> StepOutcome:
    """Apply the ordinal and plausibility masks to the clean distribution.

    Tokens failing either mask get probability zero; survivors are
    renormalized.  If the intersection is empty the step falls back to the
    plausibility-masked clean distribution (the plausibility set always
    contains the argmax, so the fallback cannot be empty).
    """
    accept = ordinal_mask(p_clean, p_mod, m)
    plausible = plausibility_set(p_clean, beta)
    masked = np.where(accept & plausible, p_clean.probs, 0.0)
    fallback = not np.any(masked > 0)
    if fallback:
        masked = np.where(plausible, p_clean.probs, 0.0)
    final = normalize(TokenDistribution(masked, masked=True))
    return StepOutcome(final, accept, plausible, fallback)


def _categorical(probs: np.ndarray, gen: np.random.Generator) -> int:
    cum = np.cumsum(probs)
    u = gen.random() * cum[-1]
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, len(probs) - 1)


def sample(
    dist: TokenDistribution,
    strategy: str,
    rng: "RngSeed | np.random.Generator",
    top_k: int | None = None,
    top_p: float = 1.0,
) -> int:
    """Reduce a distribution to one token index.

    greedy: argmax, lowest index on ties.  multinomial: one categorical draw.
    top_k: keep the k largest entries (ties resolved toward lower indices),
    renormalize, draw.  nucleus: keep the smallest descending-sorted prefix
    whose cumulative mass reaches top_p, renormalize, draw.
    """
    probs = dist.probs
    if strategy == "greedy":
        return int(np.argmax(probs))
    gen = as_generator(rng)
    if strategy == "multinomial":
        return _categorical(probs, gen)
    # Stable descending order: probability first, lowest index breaking ties.
    order = np.lexsort((np.arange(len(probs)), -probs))
    if strategy == "top_k":
        if top_k is None or top_k < 1:
            raise VordError("bad-config", "top_k sampling requires top_k >= 1")
        keep = order[: min(top_k, len(probs))]
    elif strategy == "nucleus":
        if not (0.0 < top_p <= 1.0):
            raise VordError("bad-config", f"top_p must lie in (0, 1], got {top_p}")
        cum = np.cumsum(probs[order])
        cut = int(np.searchsorted(cum, top_p, side="left")) + 1
        keep = order[:cut]
    else:
        raise VordError("bad-config", f"unknown strategy {strategy!r}")
    truncated = np.zeros_like(probs)
    truncated[keep] = probs[keep]
    return _categorical(truncated, gen)


def _resolve_margin(
    config: DecodeConfig,
    e_clean: VisualEmbedding,
    e_mod: VisualEmbedding,
) -> float:
    if config.margin == "adaptive":
        return adaptive_margin(e_clean, e_mod)
    return float(config.margin)


def generate(
    model: ConditionalModel,
    encoder: VisualEncoder,
    v: ImageTensor,
    corruption: CorruptionSpec | None,
    prompt: Sequence[int],
    config: DecodeConfig,
    rng: "RngSeed | int",
    partner: ImageTensor | None = None,
) -> GenerationTrace:
    """Run the full ordinal decoding loop and return its audit trace.

    A corrupted copy of ``v`` is built once per call (or per step when the
    corruption requests resampling), the margin is computed from the two
    embeddings, and tokens are emitted starting after BOS until EOS or
    ``max_new_tokens``.  With ``vord_enabled=False`` the corrupted pass is
    skipped entirely and only the plausibility truncation applies; the
    records then mirror the clean distribution on both sides.  Corruption
    and sampling consume independent child seeds, so the baseline and the
    ordinal path see identical sampling streams.
    """
    if len(prompt) == 0:
        raise VordError("empty-prompt", "prompt must be non-empty")
    root = rng if isinstance(rng, RngSeed) else RngSeed(int(rng))
    corruption_seed, sampling_seed = root.split(2)
    corruption_gen = corruption_seed.generator()
    sampling_gen = sampling_seed.generator()

    e_clean = encoder.encode(v)

    def corrupted_view() -> tuple[VisualEmbedding, float]:
        if corruption is None:
            raise VordError("bad-config", "vord_enabled decoding requires a corruption spec")
        v_mod = corrupt(v, corruption, corruption_gen, partner)
        e_mod = encoder.encode(v_mod)
        return e_mod, _resolve_margin(config, e_clean, e_mod)

    if config.vord_enabled:
        e_mod, margin = corrupted_view()
    else:
        e_mod, margin = e_clean, 0.0

    vocab = model.vocabulary
    prompt = tuple(int(t) for t in prompt)
    prefix: list[int] = [vocab.bos_id]
    records: list[StepRecord] = []
    tokens: list[int] = []
    terminated_by = "max_len"

    for step in range(config.max_new_tokens):
        if config.vord_enabled and corruption is not None and corruption.resample_per_step and step > 0:
            e_mod, margin = corrupted_view()
        p_clean = softmax(model.next_token_logits(e_clean, prompt, prefix), config.temperature)
        if config.vord_enabled:
            p_mod = softmax(model.next_token_logits(e_mod, prompt, prefix), config.temperature)
            outcome = vord_step(p_clean, p_mod, margin, config.beta)
        else:
            p_mod = p_clean
            outcome = vord_step(p_clean, p_clean, 0.0, config.beta)
        chosen = sample(outcome.final_dist, config.strategy, sampling_gen,
                        top_k=config.top_k, top_p=config.top_p)
        records.append(StepRecord(
            step=step,
            p_clean=p_clean,
            p_mod=p_mod,
            margin=margin,
            ordinal_mask=outcome.ordinal_mask,
            plausible_set=outcome.plausible_set,
            final_dist=outcome.final_dist,
            chosen=chosen,
            fallback_used=outcome.fallback_used,
        ))
        tokens.append(chosen)
        prefix.append(chosen)
        if chosen == vocab.eos_id:
            terminated_by = "eos"
            break

    return GenerationTrace(tuple(records), tuple(tokens), terminated_by)
