"""Benchmark experiment runners: yes/no probing over a split, the margin
ablation, and the corruption ablation, plus their CSV emitters.

Every runner is a pure function of (model parameters, split, configs, seed):
per-query seeds are derived from the run seed by index, so results are
independent of evaluation order and worker count.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..calibration import (
    BinaryMetrics,
    CalibrationReport,
    PredictionRecord,
    answer_confidence,
    binary_metrics,
    ece,
)
from ..core import RngSeed, softmax
from ..corruption import CorruptionSpec
from ..decoding import ConditionalModel, DecodeConfig, generate
from ..errors import VordError
from ..image_io import atomic_write_bytes
from ..loss import LossConfig, TrainExample, TrainableModel, batch_loss, prepare_batch
from ..vision import VisualEncoder
from .model import NO, YES, object_token
from .world import BenchmarkSplit

__all__ = [
    "MethodResult",
    "run_pope_experiment",
    "run_margin_ablation",
    "run_corruption_ablation",
    "split_to_examples",
    "heldout_metrics",
    "write_methods_csv",
    "write_reliability_csv",
    "write_rows_csv",
]

DEFAULT_ABLATION_MARGINS: tuple = (0.0, 0.25, 0.5, 0.75, "adaptive")

DEFAULT_CORRUPTIONS: dict[str, CorruptionSpec] = {
    "mixup": CorruptionSpec(kind="mixup", alpha=1.0, partner_selection="shuffled_batch"),
    "diffusion": CorruptionSpec(kind="diffusion", gamma=0.5),
    "gaussian_noise": CorruptionSpec(kind="gaussian_noise", severity=0.1),
    "contrast": CorruptionSpec(kind="contrast", severity=0.5),
    "brightness": CorruptionSpec(kind="brightness", severity=0.05),
}


@dataclass(frozen=True)
class MethodResult:
    name: str
    metrics: BinaryMetrics
    calibration: CalibrationReport
    mean_margin: float
    fallback_rate: float
    false_yes_rate: float


def _eval_queries(
    model: ConditionalModel,
    encoder: VisualEncoder,
    split: BenchmarkSplit,
    config: DecodeConfig,
    corruption: CorruptionSpec | None,
    seeds: Sequence[RngSeed],
    partner_perm: np.ndarray,
    indices: Sequence[int],
) -> list[tuple[str, float, float, bool]]:
    """Evaluate the given query indices: (answer, confidence, margin, fallback)."""
    out = []
    needs_partner = (
        corruption is not None
        and corruption.kind == "mixup"
        and corruption.partner_selection == "shuffled_batch"
    )
    for i in indices:
        q = split.queries[i]
        scene = split.scenes[q.scene_index]
        partner = None
        if needs_partner:
            partner = split.scenes[split.queries[int(partner_perm[i])].scene_index].image
        trace = generate(
            model, encoder, scene.image, corruption,
            prompt=(object_token(q.object_id),),
            config=config, rng=seeds[i], partner=partner,
        )
        first = trace.records[0]
        answer, conf = answer_confidence(first.final_dist, YES, NO)
        out.append((answer, conf, first.margin, first.fallback_used))
    return out


def _eval_chunk(args):
    return _eval_queries(*args)


def _evaluate_method(
    model: ConditionalModel,
    encoder: VisualEncoder,
    split: BenchmarkSplit,
    config: DecodeConfig,
    corruption: CorruptionSpec | None,
    run_seed: RngSeed,
    jobs: int = 1,
) -> list[tuple[str, float, float, bool]]:
    n = len(split.queries)
    perm_seed, *query_seeds = run_seed.split(n + 1)
    partner_perm = perm_seed.generator().permutation(n)
    indices = list(range(n))
    if jobs <= 1 or n < 4 * jobs:
        return _eval_queries(model, encoder, split, config, corruption,
                             query_seeds, partner_perm, indices)
    chunks = [indices[c::jobs] for c in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_eval_chunk, [
            (model, encoder, split, config, corruption, query_seeds, partner_perm, chunk)
            for chunk in chunks
        ]))
    merged: list = [None] * n
    for chunk, part in zip(chunks, parts):
        for i, row in zip(chunk, part):
            merged[i] = row
    return merged


def _summarize(
    name: str,
    split: BenchmarkSplit,
    rows: Sequence[tuple[str, float, float, bool]],
    n_bins: int,
) -> MethodResult:
    labels = [q.label for q in split.queries]
    answers = [(a, c) for a, c, _, _ in rows]
    records = [
        PredictionRecord(confidence=c, correct=(a == lbl))
        for (a, c, _, _), lbl in zip(rows, labels)
    ]
    n_negative = sum(1 for lbl in labels if lbl == "no")
    false_yes = sum(1 for (a, _, _, _), lbl in zip(rows, labels) if lbl == "no" and a == "yes")
    return MethodResult(
        name=name,
        metrics=binary_metrics(answers, labels),
        calibration=ece(records, n_bins),
        mean_margin=float(np.mean([m for _, _, m, _ in rows])),
        fallback_rate=float(np.mean([fb for _, _, _, fb in rows])),
        false_yes_rate=false_yes / n_negative if n_negative else 0.0,
    )


def run_pope_experiment(
    model: ConditionalModel,
    encoder: VisualEncoder,
    split: BenchmarkSplit,
    configs: Mapping[str, DecodeConfig],
    corruption: CorruptionSpec | None,
    rng: "RngSeed | int",
    n_bins: int = 15,
    jobs: int = 1,
) -> dict[str, MethodResult]:
    """Decode one answer per query under each named config and score it.

    All configs share the same per-query seeds, so corruption draws are
    paired across methods.
    """
    root = rng if isinstance(rng, RngSeed) else RngSeed(int(rng))
    results: dict[str, MethodResult] = {}
    for name, config in configs.items():
        rows = _evaluate_method(model, encoder, split, config,
                                corruption if config.vord_enabled else None,
                                root, jobs=jobs)
        results[name] = _summarize(name, split, rows, n_bins)
    return results


def run_margin_ablation(
    model: ConditionalModel,
    encoder: VisualEncoder,
    split: BenchmarkSplit,
    corruption: CorruptionSpec,
    rng: "RngSeed | int",
    margins: Sequence = DEFAULT_ABLATION_MARGINS,
    base_config: DecodeConfig | None = None,
    n_bins: int = 15,
    jobs: int = 1,
) -> list[dict]:
    """Compare fixed margin settings against the adaptive margin and against
    plain (non-ordinal) decoding; one row per setting."""
    base = base_config if base_config is not None else DecodeConfig()
    configs: dict[str, DecodeConfig] = {
        "regular": replace(base, vord_enabled=False, beta=0.0),
    }
    for m in margins:
        name = "adaptive" if m == "adaptive" else f"{float(m):.2f}"
        configs[name] = replace(base, margin=m, vord_enabled=True)
    results = run_pope_experiment(model, encoder, split, configs, corruption,
                                  rng, n_bins=n_bins, jobs=jobs)
    rows = []
    for name, res in results.items():
        rows.append({
            "margin": name,
            "mean_margin": res.mean_margin,
            "accuracy": res.metrics.accuracy,
            "precision": res.metrics.precision,
            "recall": res.metrics.recall,
            "f1": res.metrics.f1,
            "ece": res.calibration.ece,
        })
    return rows


def run_corruption_ablation(
    model: ConditionalModel,
    encoder: VisualEncoder,
    split: BenchmarkSplit,
    rng: "RngSeed | int",
    kinds: Sequence[str] = tuple(DEFAULT_CORRUPTIONS),
    specs: Mapping[str, CorruptionSpec] | None = None,
    base_config: DecodeConfig | None = None,
    n_bins: int = 15,
    jobs: int = 1,
) -> list[dict]:
    """Run ordinal decoding under each corruption kind; report F1 and the
    mean adaptive margin it induces."""
    table = dict(DEFAULT_CORRUPTIONS)
    if specs:
        table.update(specs)
    base = base_config if base_config is not None else DecodeConfig()
    rows = []
    for kind in kinds:
        if kind not in table:
            raise VordError("unknown-corruption", f"no corruption spec for kind {kind!r}")
        results = run_pope_experiment(
            model, encoder, split, {"vord": replace(base, vord_enabled=True)},
            table[kind], rng, n_bins=n_bins, jobs=jobs,
        )
        res = results["vord"]
        rows.append({"kind": kind, "f1": res.metrics.f1, "mean_margin": res.mean_margin})
    return rows


def split_to_examples(split: BenchmarkSplit) -> list[TrainExample]:
    """Turn benchmark queries into supervised (image, prompt, answer) items."""
    return [
        TrainExample(
            image=split.scenes[q.scene_index].image,
            prompt=(object_token(q.object_id),),
            target=YES if q.label == "yes" else NO,
        )
        for q in split.queries
    ]


def heldout_metrics(
    model: TrainableModel,
    encoder: VisualEncoder,
    examples: Sequence[TrainExample],
    corruption: CorruptionSpec,
    loss_config: LossConfig,
    rng: "RngSeed | int",
    n_bins: int = 15,
) -> dict:
    """Loss, ordinal-violation rate, and answer quality on held-out examples.

    The corruption seed is fixed by ``rng``, so calling this before and
    after training compares the model on identical corrupted views.
    """
    prepared = prepare_batch(encoder, examples, corruption, loss_config, rng)
    stats = batch_loss(model, prepared, loss_config)
    records = []
    hits = 0
    for ex, prep in zip(examples, prepared):
        dist = softmax(model.next_token_logits(prep.e_clean, ex.prompt, (model.vocabulary.bos_id,)))
        answer, conf = answer_confidence(dist, YES, NO)
        truth = "yes" if ex.target == YES else "no"
        correct = answer == truth
        hits += correct
        records.append(PredictionRecord(confidence=conf, correct=correct))
    report = ece(records, n_bins)
    return {
        "heldout_ce": stats.ce,
        "heldout_violation_rate": stats.violation_rate,
        "heldout_accuracy": hits / len(examples),
        "heldout_ece": report.ece,
    }


# -- CSV emitters -----------------------------------------------------------


def _csv_bytes(fieldnames: Sequence[str], rows: Sequence[Mapping]) -> bytes:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})
    return buf.getvalue().encode("utf-8")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_methods_csv(results: Mapping[str, MethodResult], path: "str | Path") -> None:
    """Metric table mirroring the benchmark layout: one row per method."""
    rows = [
        {
            "method": name,
            "accuracy": r.metrics.accuracy,
            "precision": r.metrics.precision,
            "recall": r.metrics.recall,
            "f1": r.metrics.f1,
            "ece": r.calibration.ece,
        }
        for name, r in results.items()
    ]
    atomic_write_bytes(path, _csv_bytes(
        ["method", "accuracy", "precision", "recall", "f1", "ece"], rows))


def write_reliability_csv(report: CalibrationReport, path: "str | Path") -> None:
    atomic_write_bytes(path, _csv_bytes(
        ["bin_center", "mean_acc", "mean_conf", "count"], report.reliability_rows()))


def write_rows_csv(rows: Sequence[Mapping], path: "str | Path", fieldnames: Sequence[str] | None = None) -> None:
    if not rows:
        raise VordError("no-data", "nothing to write")
    fields = list(fieldnames) if fieldnames is not None else list(rows[0].keys())
    atomic_write_bytes(path, _csv_bytes(fields, rows))
