"""A tiny trainable vision-language model with a built-in hallucination bias.

The vocabulary is [BOS, EOS, yes, no, object tokens].  Answer logits combine
two signals: trainable bilinear visual evidence (how strongly the queried
object's signature shows up in the pooled embedding) and a fixed textual
prior derived from the co-occurrence matrix (how strongly the objects the
model believes it sees usually accompany the queried one).  Belief is
detection plus an uncertainty-gated imagination term: the less decisive the
detections, the more the model assumes popular objects are present.  The
prior therefore pushes "yes" for co-occurring objects whether or not they
are present, and pushes harder as the image degrades, which is the bias the
decoding experiments measure and mitigate.

Prompt conventions: a single object token asks "is this object present?"; a
single BOS token asks for a caption (object tokens in detection order until
EOS).  Only the bilinear evidence tensor is trainable, and the probability
Jacobian with respect to it is analytic.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import LogitsVector, Vocabulary
from ..errors import VordError
from ..image_io import atomic_write_bytes
from ..loss import TrainableModel
from ..vision import VisualEmbedding, mean_pool
from .world import ObjectCatalog

__all__ = ["ToyLVLM", "UniformModel", "save_model", "load_model_parameters"]

BOS, EOS, YES, NO = 0, 1, 2, 3
N_SPECIAL = 4

MODEL_MAGIC = b"VLM1"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def object_token(object_id: int) -> int:
    return N_SPECIAL + object_id


def build_vocabulary(n_objects: int) -> Vocabulary:
    labels = ["<bos>", "<eos>", "yes", "no"] + [f"obj{i:02d}" for i in range(n_objects)]
    return Vocabulary(size=N_SPECIAL + n_objects, bos_id=BOS, eos_id=EOS, labels=labels)


class ToyLVLM(TrainableModel):
    """Bilinear evidence plus a fixed co-occurrence prior over a toy vocabulary."""

    def __init__(
        self,
        catalog: ObjectCatalog,
        weights: np.ndarray | None = None,
        evidence_scale: float = 2.5,
        prior_scale: float = 1.2,
        prior_center: float = 1.9,
        imagine_scale: float = 1.0,
        detect_sharpness: float = 8.0,
        detect_threshold: float = 0.25,
        no_bias: float = 0.3,
        object_scale: float = 0.8,
        object_offset: float = 3.0,
        caption_evidence: float = 4.0,
        caption_prior: float = 1.5,
        caption_eos: float = 2.0,
    ):
        self.catalog = catalog
        k = catalog.n_objects
        d = catalog.dim
        self._vocab = build_vocabulary(k)
        v = self._vocab.size
        if weights is None:
            # Hand-initialized "biased" weights: the signature of the queried
            # object votes yes, its negation votes no, everything else zero.
            weights = np.zeros((v, d, k))
            unit = catalog.signatures / (catalog.signatures**2).sum(axis=1, keepdims=True)
            for kk in range(k):
                weights[YES, :, kk] = evidence_scale * unit[kk]
                weights[NO, :, kk] = -evidence_scale * unit[kk]
        weights = np.array(weights, dtype=np.float64)
        if weights.shape != (v, d, k):
            raise VordError("bad-model", f"weights must have shape {(v, d, k)}, got {weights.shape}")
        self._w = weights
        self.prior_scale = prior_scale
        self.prior_center = prior_center
        self.imagine_scale = imagine_scale
        self.detect_sharpness = detect_sharpness
        self.detect_threshold = detect_threshold
        self.no_bias = no_bias
        self.object_scale = object_scale
        self.object_offset = object_offset
        self.caption_evidence = caption_evidence
        self.caption_prior = caption_prior
        self.caption_eos = caption_eos
        self._sig_sq = (catalog.signatures**2).sum(axis=1)

    # -- ConditionalModel ---------------------------------------------------

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    def next_token_logits(
        self,
        visual: VisualEmbedding,
        prompt: Sequence[int],
        prefix: Sequence[int],
    ) -> LogitsVector:
        logits, _, _ = self._logits(visual, prompt, prefix)
        return LogitsVector(logits)

    # -- TrainableModel -----------------------------------------------------

    @property
    def parameters(self) -> np.ndarray:
        return self._w.reshape(-1).copy()

    def set_parameters(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self._w.size:
            raise VordError("bad-model", f"expected {self._w.size} parameters, got {theta.size}")
        self._w = theta.reshape(self._w.shape).copy()

    def prob_jacobian(
        self,
        visual: VisualEmbedding,
        prompt: Sequence[int],
        prefix: Sequence[int],
    ) -> tuple[np.ndarray, np.ndarray]:
        logits, delta, query = self._logits(visual, prompt, prefix)
        shifted = logits - logits.max()
        expd = np.exp(shifted)
        p = expd / expd.sum()
        v, d, k = self._w.shape
        jac = np.zeros((v, v * d * k))
        if query is not None and delta is not None:
            # d logits[y] / d W[y, :, query] = delta; softmax chain rule gives
            # d p[t] / d W[y, :, query] = p[t] (1[t=y] - p[y]) * delta.
            cols_base = np.arange(d) * k + query
            for y in range(v):
                coeff = -p * p[y]
                coeff[y] += p[y]
                jac[:, y * d * k + cols_base] = np.outer(coeff, delta)
        return p, jac

    # -- internals ----------------------------------------------------------

    def _detections(self, visual: VisualEmbedding) -> tuple[np.ndarray, np.ndarray]:
        delta = mean_pool(visual) - self.catalog.base_pooled
        d_scores = self.catalog.signatures @ delta / self._sig_sq
        return delta, d_scores

    def _beliefs(self, d_scores: np.ndarray) -> np.ndarray:
        """Detections blended with an uncertainty-gated popularity prior.

        When detections are decisive (near 0 or 1) the model believes its
        eyes; the flatter they get, the more it assumes popular objects are
        around.
        """
        det = _sigmoid(self.detect_sharpness * (d_scores - self.detect_threshold))
        uncertainty = 1.0 - float(np.abs(2.0 * det - 1.0).mean())
        popularity = self.catalog.frequencies * self.catalog.n_objects
        return det + self.imagine_scale * uncertainty * popularity

    def _logits(
        self,
        visual: VisualEmbedding,
        prompt: Sequence[int],
        prefix: Sequence[int],
    ) -> tuple[np.ndarray, np.ndarray | None, int | None]:
        """Returns (logits, delta, queried object) with the latter two set
        only when the trainable evidence term participates."""
        if len(prompt) == 0:
            raise VordError("empty-prompt", "prompt must be non-empty")
        v = self._vocab.size
        first = int(prompt[0])
        if not (0 <= first < v):
            raise VordError("bad-prompt", f"prompt token {first} outside vocabulary")
        if first >= N_SPECIAL:
            return self._qa_logits(visual, first - N_SPECIAL, prefix)
        if first == BOS:
            return self._caption_logits(visual, prefix), None, None
        raise VordError("bad-prompt", "prompt must start with an object token (QA) or BOS (caption)")

    def _qa_logits(
        self,
        visual: VisualEmbedding,
        query: int,
        prefix: Sequence[int],
    ) -> tuple[np.ndarray, np.ndarray | None, int | None]:
        v = self._vocab.size
        if len(prefix) >= 2:
            # Answer already emitted: deterministically close the sequence.
            logits = np.full(v, -12.0)
            logits[EOS] = 12.0
            return logits, None, None
        delta, d_scores = self._detections(visual)
        belief = self._beliefs(d_scores)
        prior = self.prior_scale * (belief @ self.catalog.cooccurrence[:, query] - self.prior_center)
        logits = np.empty(v)
        logits[BOS] = -14.0
        logits[EOS] = -10.0
        logits[YES] = prior
        logits[NO] = -prior + self.no_bias
        logits[N_SPECIAL:] = self.object_scale * d_scores - self.object_offset
        logits = logits + self._w[:, :, query] @ delta
        return logits, delta, query

    def _caption_logits(self, visual: VisualEmbedding, prefix: Sequence[int]) -> np.ndarray:
        v = self._vocab.size
        delta, d_scores = self._detections(visual)
        pressure = self._beliefs(d_scores) @ self.catalog.cooccurrence
        scores = self.caption_evidence * d_scores + self.caption_prior * pressure
        for tok in prefix:
            if tok >= N_SPECIAL:
                scores[tok - N_SPECIAL] -= 16.0
        logits = np.empty(v)
        logits[BOS] = -14.0
        logits[EOS] = self.caption_eos
        logits[YES] = -10.0
        logits[NO] = -10.0
        logits[N_SPECIAL:] = scores
        return logits


class UniformModel(TrainableModel):
    """Degenerate scorer: every token equally likely, nothing trainable."""

    def __init__(self, n_objects: int):
        self._vocab = build_vocabulary(n_objects)

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    def next_token_logits(self, visual, prompt, prefix) -> LogitsVector:
        return LogitsVector(np.zeros(self._vocab.size))

    @property
    def parameters(self) -> np.ndarray:
        return np.zeros(0)

    def set_parameters(self, theta: np.ndarray) -> None:
        if np.asarray(theta).size:
            raise VordError("bad-model", "uniform model has no parameters")

    def prob_jacobian(self, visual, prompt, prefix):
        v = self._vocab.size
        return np.full(v, 1.0 / v), np.zeros((v, 0))


def save_model(model: TrainableModel, path: "str | Path") -> None:
    """Versioned binary dump: magic, u32 parameter count, little-endian f32 values."""
    params = model.parameters.astype("<f4")
    payload = MODEL_MAGIC + struct.pack("<I", params.size) + params.tobytes()
    atomic_write_bytes(path, payload)


def load_model_parameters(path: "str | Path") -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MODEL_MAGIC:
        raise VordError("bad-model-file", f"{path}: not a {MODEL_MAGIC.decode()} model file")
    (count,) = struct.unpack("<I", raw[4:8])
    body = raw[8:]
    if len(body) != count * 4:
        raise VordError("bad-model-file", f"{path}: expected {count * 4} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").astype(np.float64)
