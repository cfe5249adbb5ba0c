"""Ordinal margin objective, its combination with cross-entropy, analytic
parameter gradients, and a plain-SGD training loop for toy models.

The per-token violation is g = p_mod - p_clean + m; the penalty is the hinge
max(g, 0) raised to the power ``psi``, reduced over the vocabulary (and over
positions in a batch).  The penalty is zero exactly when the ordinal property
p_clean + m >= p_mod holds at every token.  Both forward passes contribute to
the gradient; the margin is treated as a constant per step.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import ImageTensor, RngSeed, TokenDistribution
from .corruption import CorruptionSpec, corrupt
from .decoding import ConditionalModel
from .errors import VordError
from .vision import VisualEmbedding, VisualEncoder, adaptive_margin

__all__ = [
    "LossConfig",
    "TrainState",
    "TrainExample",
    "PreparedExample",
    "LossBreakdown",
    "TrainResult",
    "TrainableModel",
    "vord_penalty",
    "cross_entropy",
    "total_loss",
    "prepare_batch",
    "batch_loss",
    "loss_gradient",
    "train",
]

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Objective hyperparameters.

    ``psi`` is the hinge exponent (1 gives the piecewise-linear variant,
    2 the piecewise-quadratic one).  ``target_only`` restricts the hinge to
    the supervised token instead of the whole vocabulary.
    """

    psi: float = 2.0
    margin: "float | str" = "adaptive"
    reduction: str = "mean"
    target_only: bool = False

    def __post_init__(self):
        if not self.psi > 0:
            raise VordError("bad-config", f"psi must be positive, got {self.psi}")
        if isinstance(self.margin, str):
            if self.margin != "adaptive":
                raise VordError("bad-config", f"margin must be 'adaptive' or a float, got {self.margin!r}")
        elif not (0.0 <= float(self.margin) <= 1.0):
            raise VordError("bad-config", f"fixed margin must lie in [0, 1], got {self.margin}")
        if self.reduction not in ("mean", "sum"):
            raise VordError("bad-config", f"reduction must be 'mean' or 'sum', got {self.reduction!r}")

    def to_json_dict(self) -> dict:
        return {
            "psi": self.psi,
            "margin": self.margin,
            "reduction": self.reduction,
            "target_only": self.target_only,
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "LossConfig":
        allowed = {"psi", "margin", "reduction", "target_only"}
        unknown = set(doc) - allowed
        if unknown:
            raise VordError("unknown-key", f"unknown loss keys: {sorted(unknown)}")
        return cls(**dict(doc))


@dataclass
class TrainState:
    """Flat parameter vector plus SGD bookkeeping."""

    parameters: np.ndarray
    learning_rate: float = 1e-5
    step_count: int = 0


@dataclass(frozen=True)
class TrainExample:
    """One supervised item: an image, a prompt, and the correct next token."""

    image: ImageTensor
    prompt: tuple[int, ...]
    target: int


@dataclass(frozen=True)
class PreparedExample:
    """A training example after corruption and margin computation."""

    e_clean: VisualEmbedding
    e_mod: VisualEmbedding
    prompt: tuple[int, ...]
    target: int
    margin: float


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    vord: float
    violation_rate: float

    @property
    def total(self) -> float:
        return self.ce + self.vord


@dataclass(frozen=True)
class TrainResult:
    state: TrainState
    history: tuple[dict, ...]


class TrainableModel(ConditionalModel):
    """Conditional model exposing a flat parameter vector and the analytic
    Jacobian of its output probabilities with respect to it."""

    @property
    @abc.abstractmethod
    def parameters(self) -> np.ndarray:
        """Copy of the flat parameter vector."""

    @abc.abstractmethod
    def set_parameters(self, theta: np.ndarray) -> None:
        """Replace the parameter vector in place (not thread-safe)."""

    @abc.abstractmethod
    def prob_jacobian(
        self,
        visual: VisualEmbedding,
        prompt: Sequence[int],
        prefix: Sequence[int],
    ) -> tuple[np.ndarray, np.ndarray]:
        """Return (probs over V, d probs / d theta of shape (V, P))."""


def _probs(dist) -> np.ndarray:
    return dist.probs if isinstance(dist, TokenDistribution) else np.asarray(dist, dtype=np.float64)


def vord_penalty(
    p_mod,
    p_clean,
    m: float,
    psi: float,
    reduction: str = "mean",
) -> float:
    """Hinge penalty on ordinal violations, reduced over the vocabulary.

    Zero iff p_clean[t] + m >= p_mod[t] for every token.
    """
    if m < 0:
        raise VordError("bad-config", f"margin must be >= 0, got {m}")
    a = _probs(p_mod)
    b = _probs(p_clean)
    if a.shape != b.shape:
        raise VordError("vocab-mismatch", f"distribution lengths differ: {a.shape} vs {b.shape}")
    g = a - b + m
    hinged = np.maximum(g, 0.0) ** psi
    return float(hinged.mean() if reduction == "mean" else hinged.sum())


def cross_entropy(p_clean, target: int) -> float:
    """-ln p[target], with a 1e-12 floor inside the log.

    A structurally exact zero (the target was masked out) is an error rather
    than a huge finite number.
    """
    p = _probs(p_clean)
    if not (0 <= target < len(p)):
        raise VordError("bad-target", f"target {target} outside vocabulary of {len(p)}")
    val = float(p[target])
    if val == 0.0:
        raise VordError("log-zero", "target token has exactly zero probability")
    return -float(np.log(max(val, _LOG_FLOOR)))


def total_loss(p_clean, p_mod, target: int, m: float, config: LossConfig) -> float:
    """Cross-entropy on the clean distribution plus the ordinal penalty.

    The modified image enters only through the penalty term.
    """
    ce = cross_entropy(p_clean, target)
    if config.target_only:
        a = float(_probs(p_mod)[target])
        b = float(_probs(p_clean)[target])
        pen = max(a - b + m, 0.0) ** config.psi
    else:
        pen = vord_penalty(p_mod, p_clean, m, config.psi, config.reduction)
    return ce + pen


def prepare_batch(
    encoder: VisualEncoder,
    examples: Sequence[TrainExample],
    corruption: CorruptionSpec,
    config: LossConfig,
    rng: "RngSeed | int",
) -> list[PreparedExample]:
    """Corrupt every example and fix its margin for the coming forward passes.

    Mixup partners come from a seeded permutation of the batch itself when
    the corruption asks for ``shuffled_batch``.
    """
    root = rng if isinstance(rng, RngSeed) else RngSeed(int(rng))
    perm_seed, *child_seeds = root.split(len(examples) + 1)
    if corruption.kind == "mixup" and corruption.partner_selection == "shuffled_batch":
        perm = perm_seed.generator().permutation(len(examples))
    else:
        perm = None
    prepared = []
    for i, ex in enumerate(examples):
        partner = examples[int(perm[i])].image if perm is not None else None
        v_mod = corrupt(ex.image, corruption, child_seeds[i].generator(), partner)
        e_clean = encoder.encode(ex.image)
        e_mod = encoder.encode(v_mod)
        m = adaptive_margin(e_clean, e_mod) if config.margin == "adaptive" else float(config.margin)
        prepared.append(PreparedExample(e_clean, e_mod, ex.prompt, ex.target, m))
    return prepared


def _forward(model: TrainableModel, ex: PreparedExample, vocab_bos: int):
    prefix = (vocab_bos,)
    p_clean, j_clean = model.prob_jacobian(ex.e_clean, ex.prompt, prefix)
    p_mod, j_mod = model.prob_jacobian(ex.e_mod, ex.prompt, prefix)
    return p_clean, j_clean, p_mod, j_mod


def batch_loss(model: TrainableModel, prepared: Sequence[PreparedExample], config: LossConfig) -> LossBreakdown:
    """Average (or sum, per the reduction) of the combined objective over a batch."""
    if len(prepared) == 0:
        raise VordError("no-data", "batch must be non-empty")
    bos = model.vocabulary.bos_id
    ces, pens, violations, total_pairs = [], [], 0, 0
    for ex in prepared:
        p_clean, _, p_mod, _ = _forward(model, ex, bos)
        ces.append(cross_entropy(p_clean, ex.target))
        if config.target_only:
            g = np.asarray([p_mod[ex.target] - p_clean[ex.target] + ex.margin])
        else:
            g = p_mod - p_clean + ex.margin
        pen = np.maximum(g, 0.0) ** config.psi
        pens.append(float(pen.mean() if config.reduction == "mean" else pen.sum()))
        violations += int(np.sum(g > 0))
        total_pairs += len(g)
    ce = float(np.mean(ces))
    vord = float(np.mean(pens) if config.reduction == "mean" else np.sum(pens))
    return LossBreakdown(ce=ce, vord=vord, violation_rate=violations / total_pairs)


def loss_gradient(
    model: TrainableModel,
    prepared: Sequence[PreparedExample],
    config: LossConfig,
) -> np.ndarray:
    """Exact gradient of ``batch_loss`` with respect to the flat parameters.

    Active hinge entries contribute psi * g^(psi-1) times the difference of
    the modified and clean probability Jacobians; inactive entries contribute
    nothing.  The cross-entropy term uses only the clean Jacobian.
    """
    if len(prepared) == 0:
        raise VordError("no-data", "batch must be non-empty")
    bos = model.vocabulary.bos_id
    n = len(prepared)
    grad = np.zeros_like(model.parameters)
    for ex in prepared:
        p_clean, j_clean, p_mod, j_mod = _forward(model, ex, bos)
        pt = max(float(p_clean[ex.target]), _LOG_FLOOR)
        grad += (-j_clean[ex.target] / pt) / n
        if config.target_only:
            g = np.asarray([p_mod[ex.target] - p_clean[ex.target] + ex.margin])
            dg = (j_mod[ex.target] - j_clean[ex.target])[None, :]
        else:
            g = p_mod - p_clean + ex.margin
            dg = j_mod - j_clean
        active = g > 0
        if np.any(active):
            coeff = config.psi * np.maximum(g, 0.0) ** (config.psi - 1.0)
            pen_grad = (coeff[active][:, None] * dg[active]).sum(axis=0)
            if config.reduction == "mean":
                pen_grad /= len(g)
            grad += pen_grad / n if config.reduction == "mean" else pen_grad
    return grad


def train(
    model: TrainableModel,
    encoder: VisualEncoder,
    dataset: Sequence[TrainExample],
    epochs: int,
    config: LossConfig,
    corruption: CorruptionSpec,
    rng: "RngSeed | int",
    learning_rate: float = 1e-5,
    batch_size: int = 32,
    heldout: "Callable[[TrainableModel], dict] | None" = None,
) -> TrainResult:
    """Plain-SGD loop: corrupt, forward twice, combine losses, step.

    Returns the final state and one history row per epoch with the running
    cross-entropy, penalty, and ordinal-violation rate (plus whatever the
    optional ``heldout`` callback reports).  Aborts with ``diverged`` if the
    loss stops being finite.
    """
    if len(dataset) == 0:
        raise VordError("no-data", "dataset must be non-empty")
    if epochs < 1:
        raise VordError("bad-config", "epochs must be >= 1")
    root = rng if isinstance(rng, RngSeed) else RngSeed(int(rng))
    epoch_seeds = root.split(epochs)
    state = TrainState(parameters=model.parameters, learning_rate=learning_rate)
    history: list[dict] = []
    for epoch, epoch_seed in enumerate(epoch_seeds):
        order_seed, corrupt_seed = epoch_seed.split(2)
        order = order_seed.generator().permutation(len(dataset))
        batch_seeds = corrupt_seed.split((len(dataset) + batch_size - 1) // batch_size)
        ce_sum = vord_sum = 0.0
        violation_sum = 0.0
        n_batches = 0
        for b, start in enumerate(range(0, len(dataset), batch_size)):
            batch = [dataset[int(i)] for i in order[start : start + batch_size]]
            prepared = prepare_batch(encoder, batch, corruption, config, batch_seeds[b])
            stats = batch_loss(model, prepared, config)
            if not np.isfinite(stats.total):
                raise VordError("diverged", f"non-finite loss at epoch {epoch}, batch {b}")
            grad = loss_gradient(model, prepared, config)
            state.parameters = state.parameters - learning_rate * grad
            if not np.all(np.isfinite(state.parameters)):
                raise VordError("diverged", f"non-finite parameters at epoch {epoch}, batch {b}")
            model.set_parameters(state.parameters)
            state.step_count += 1
            ce_sum += stats.ce
            vord_sum += stats.vord
            violation_sum += stats.violation_rate
            n_batches += 1
        row = {
            "epoch": epoch,
            "ce_loss": ce_sum / n_batches,
            "vord_loss": vord_sum / n_batches,
            "violation_rate": violation_sum / n_batches,
        }
        if heldout is not None:
            row.update(heldout(model))
        history.append(row)
    return TrainResult(state=state, history=tuple(history))
