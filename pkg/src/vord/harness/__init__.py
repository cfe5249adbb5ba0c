"""Desk-scale world: a seeded object catalog, rendered scenes, a biased toy
vision-language model, and yes/no probing experiments over them."""

from .world import (
    ObjectCatalog,
    Scene,
    PopeQuery,
    BenchmarkSplit,
    make_world,
    render_scene,
    generate_benchmark,
    save_split,
    load_split,
)
from .model import ToyLVLM, UniformModel, save_model, load_model_parameters
from .experiments import (
    MethodResult,
    run_pope_experiment,
    run_margin_ablation,
    run_corruption_ablation,
    split_to_examples,
    heldout_metrics,
    write_methods_csv,
    write_reliability_csv,
    write_rows_csv,
)

__all__ = [
    "ObjectCatalog",
    "Scene",
    "PopeQuery",
    "BenchmarkSplit",
    "make_world",
    "render_scene",
    "generate_benchmark",
    "save_split",
    "load_split",
    "ToyLVLM",
    "UniformModel",
    "save_model",
    "load_model_parameters",
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
