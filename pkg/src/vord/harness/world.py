"""Synthetic object world: catalog, scene rendering, and benchmark splits.

Each object owns one patch cell of the image and a pixel pattern; its
embedding signature is the (linear) encoder's response to that pattern, so
detection reduces to projecting the pooled embedding onto the signatures.
Scenes are sampled with co-occurrence structure: objects that share a group
appear together far more often than chance, and a Zipf law makes some
objects globally popular.  Benchmark splits query one present and one absent
object per scene, with the absent object picked uniformly (random), by
global frequency (popular), or by co-occurrence with the present objects
(adversarial).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import ImageTensor, RngSeed
from ..errors import VordError
from ..image_io import read_vten, write_vten
from ..vision import ToyPatchEncoder

__all__ = [
    "ObjectCatalog",
    "Scene",
    "PopeQuery",
    "BenchmarkSplit",
    "make_world",
    "render_scene",
    "sample_scene_objects",
    "generate_benchmark",
    "save_split",
    "load_split",
]

SETTINGS = ("random", "popular", "adversarial")

SCENE_NOISE_STD = 0.05
BACKGROUND = 0.5


@dataclass(frozen=True)
class ObjectCatalog:
    """K objects with pixel patterns, embedding signatures, a co-occurrence
    prior, and Zipf popularity weights.

    Besides one cell per object, the grid reserves anchor cells that carry a
    fixed texture in every scene.  The shared anchor keeps scene embeddings
    of the same world close together, so the adaptive margin responds to how
    much of the scene content changed rather than jumping to large angles
    for any object difference.
    """

    patterns: np.ndarray      # (K, patch, patch, C), additive around the background
    anchors: np.ndarray       # (A, patch, patch, C), fixed texture cells
    signatures: np.ndarray    # (K, D) pooled embedding response of each pattern
    base_pooled: np.ndarray   # (D,) pooled embedding of the objectless scene
    cooccurrence: np.ndarray  # (K, K) symmetric, zero diagonal, max 1
    frequencies: np.ndarray   # (K,) Zipf weights, sum 1
    patch_size: int
    channels: int
    grid: int

    def __post_init__(self):
        c = self.cooccurrence
        if c.shape[0] != c.shape[1] or not np.allclose(c, c.T) or np.any(np.diag(c) != 0):
            raise VordError("bad-catalog", "co-occurrence must be symmetric with zero diagonal")
        if self.n_objects + self.anchors.shape[0] > self.grid * self.grid:
            raise VordError("bad-catalog", "more objects plus anchors than patch cells")

    @property
    def n_objects(self) -> int:
        return self.patterns.shape[0]

    @property
    def dim(self) -> int:
        return self.signatures.shape[1]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        side = self.grid * self.patch_size
        return side, side, self.channels

    def cell(self, object_id: int) -> tuple[int, int]:
        return divmod(object_id, self.grid)


@dataclass(frozen=True)
class Scene:
    present: frozenset[int]
    image: ImageTensor

    def __post_init__(self):
        if not self.present:
            raise VordError("bad-scene", "a scene must contain at least one object")


@dataclass(frozen=True)
class PopeQuery:
    scene_index: int
    object_id: int
    label: str  # "yes" | "no"


@dataclass(frozen=True)
class BenchmarkSplit:
    scenes: tuple[Scene, ...]
    queries: tuple[PopeQuery, ...]
    setting: str


def make_world(
    seed: "RngSeed | int",
    n_objects: int = 16,
    dim: int = 32,
    patch_size: int = 4,
    channels: int = 3,
    n_groups: int = 4,
    n_anchors: int = 9,
    pattern_amplitude: float = 0.45,
    zipf_exponent: float = 1.1,
) -> tuple[ObjectCatalog, ToyPatchEncoder]:
    """Build a catalog and its matching patch encoder from one seed."""
    root = seed if isinstance(seed, RngSeed) else RngSeed(int(seed))
    enc_seed, pat_seed, co_seed, freq_seed = root.split(4)
    if patch_size * patch_size * channels < dim:
        raise VordError("bad-catalog", "patch pixels must be at least the embedding dim")
    encoder = ToyPatchEncoder(patch_size, channels, dim, enc_seed)
    grid = int(np.ceil(np.sqrt(n_objects + n_anchors)))
    n_patches = grid * grid

    gen = pat_seed.generator()
    patterns = gen.uniform(-pattern_amplitude, pattern_amplitude,
                           size=(n_objects, patch_size, patch_size, channels))
    anchors = gen.uniform(-pattern_amplitude, pattern_amplitude,
                          size=(n_anchors, patch_size, patch_size, channels))

    # Signature = the encoder's pooled response to adding the pattern to the
    # objectless canvas.  The noiseless canvas never clamps, so this is the
    # exact per-object embedding shift.
    side = grid * patch_size
    canvas = np.full((side, side, channels), BACKGROUND)
    for a in range(n_anchors):
        r, col = divmod(n_objects + a, grid)
        canvas[r * patch_size : (r + 1) * patch_size,
               col * patch_size : (col + 1) * patch_size, :] += anchors[a]
    from ..vision import mean_pool
    base_pooled = mean_pool(encoder.encode(ImageTensor(canvas)))
    signatures = np.empty((n_objects, dim))
    for k in range(n_objects):
        with_k = canvas.copy()
        r, col = divmod(k, grid)
        with_k[r * patch_size : (r + 1) * patch_size,
               col * patch_size : (col + 1) * patch_size, :] += patterns[k]
        signatures[k] = mean_pool(encoder.encode(ImageTensor(with_k))) - base_pooled

    cgen = co_seed.generator()
    groups = np.arange(n_objects) % n_groups
    cgen.shuffle(groups)
    affinity = cgen.uniform(0.5, 1.0, size=(n_objects, n_objects))
    same_group = groups[:, None] == groups[None, :]
    co = affinity * np.where(same_group, 1.0, 0.15)
    co = np.triu(co, 1)
    co = co + co.T
    co = co / co.max()

    ranks = freq_seed.generator().permutation(n_objects)
    freq = 1.0 / (ranks + 1.0) ** zipf_exponent
    freq = freq / freq.sum()

    for arr in (patterns, anchors, signatures, base_pooled, co, freq):
        arr.setflags(write=False)
    catalog = ObjectCatalog(
        patterns=patterns,
        anchors=anchors,
        signatures=signatures,
        base_pooled=base_pooled,
        cooccurrence=co,
        frequencies=freq,
        patch_size=patch_size,
        channels=channels,
        grid=grid,
    )
    return catalog, encoder


def render_scene(catalog: ObjectCatalog, present: Sequence[int], rng: "RngSeed | int") -> Scene:
    """Paint the anchor textures and each present object's pattern into their
    cells over a gray background, plus seeded pixel noise."""
    present = frozenset(int(o) for o in present)
    if not present:
        raise VordError("bad-scene", "a scene must contain at least one object")
    h, w, c = catalog.image_shape
    canvas = np.full((h, w, c), BACKGROUND)
    p = catalog.patch_size
    k = catalog.n_objects
    for a in range(catalog.anchors.shape[0]):
        r, col = catalog.cell(k + a)
        canvas[r * p : (r + 1) * p, col * p : (col + 1) * p, :] += catalog.anchors[a]
    for obj in sorted(present):
        r, col = catalog.cell(obj)
        canvas[r * p : (r + 1) * p, col * p : (col + 1) * p, :] += catalog.patterns[obj]
    gen = rng.generator() if isinstance(rng, RngSeed) else RngSeed(int(rng)).generator()
    canvas += gen.normal(0.0, SCENE_NOISE_STD, size=canvas.shape)
    return Scene(present=present, image=ImageTensor(canvas))


def sample_scene_objects(
    catalog: ObjectCatalog,
    gen: np.random.Generator,
    n_min: int = 2,
    n_max: int = 4,
    cooccur_prob: float = 0.7,
) -> frozenset[int]:
    """Draw a set of present objects: the first by popularity, the rest
    mostly from the co-occurrence neighbors of what is already present."""
    k = catalog.n_objects
    n = int(gen.integers(n_min, n_max + 1))
    chosen = [int(gen.choice(k, p=catalog.frequencies))]
    while len(chosen) < n:
        absent = np.setdiff1d(np.arange(k), chosen)
        if gen.random() < cooccur_prob:
            weights = catalog.cooccurrence[chosen][:, absent].sum(axis=0)
        else:
            weights = catalog.frequencies[absent]
        total = weights.sum()
        if total <= 0:
            weights = np.ones(len(absent))
            total = float(len(absent))
        chosen.append(int(gen.choice(absent, p=weights / total)))
    return frozenset(chosen)


def _negative_object(
    catalog: ObjectCatalog,
    present: frozenset[int],
    setting: str,
    gen: np.random.Generator,
) -> int:
    absent = np.setdiff1d(np.arange(catalog.n_objects), sorted(present))
    if absent.size == 0:
        raise VordError("bad-scene", "scene covers the whole catalog; no negative exists")
    if setting == "random":
        return int(gen.choice(absent))
    if setting == "popular":
        return int(absent[np.argmax(catalog.frequencies[absent])])
    if setting == "adversarial":
        scores = catalog.cooccurrence[sorted(present)][:, absent].sum(axis=0)
        return int(absent[np.argmax(scores)])
    raise VordError("bad-config", f"unknown benchmark setting {setting!r}")


def generate_benchmark(
    catalog: ObjectCatalog,
    n_scenes: int,
    setting: str,
    rng: "RngSeed | int",
) -> BenchmarkSplit:
    """n_scenes scenes, two queries each: one present object (label yes) and
    one absent object chosen per the setting (label no)."""
    if n_scenes < 1:
        raise VordError("bad-config", "n_scenes must be >= 1")
    if setting not in SETTINGS:
        raise VordError("bad-config", f"unknown benchmark setting {setting!r}")
    root = rng if isinstance(rng, RngSeed) else RngSeed(int(rng))
    scene_seeds = root.split(n_scenes)
    scenes: list[Scene] = []
    queries: list[PopeQuery] = []
    for i, scene_seed in enumerate(scene_seeds):
        pick_seed, render_seed, query_seed = scene_seed.split(3)
        gen = pick_seed.generator()
        present = sample_scene_objects(catalog, gen)
        scenes.append(render_scene(catalog, present, render_seed))
        qgen = query_seed.generator()
        positive = int(qgen.choice(sorted(present)))
        negative = _negative_object(catalog, present, setting, qgen)
        queries.append(PopeQuery(i, positive, "yes"))
        queries.append(PopeQuery(i, negative, "no"))
    return BenchmarkSplit(tuple(scenes), tuple(queries), setting)


def save_split(split: BenchmarkSplit, out_dir: "str | Path") -> Path:
    """Write scene images as VTEN plus a JSON-lines index; returns the index path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(split.scenes):
        write_vten(scene.image, out_dir / f"scene_{i:05d}.vten")
    lines = []
    for q in split.queries:
        lines.append(json.dumps({
            "scene": q.scene_index,
            "image": f"scene_{q.scene_index:05d}.vten",
            "objects": sorted(split.scenes[q.scene_index].present),
            "query": q.object_id,
            "label": q.label,
        }, sort_keys=True))
    index = out_dir / f"split_{split.setting}.jsonl"
    index.write_text("\n".join(lines) + "\n")
    return index


def load_split(index_path: "str | Path", setting: str | None = None) -> BenchmarkSplit:
    """Rebuild a split from its JSON-lines index and VTEN images."""
    index_path = Path(index_path)
    if setting is None:
        stem = index_path.stem
        setting = stem.split("_", 1)[1] if "_" in stem else "random"
    scenes: dict[int, Scene] = {}
    queries: list[PopeQuery] = []
    for line in index_path.read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        idx = int(doc["scene"])
        if idx not in scenes:
            image = read_vten(index_path.parent / doc["image"])
            scenes[idx] = Scene(frozenset(int(o) for o in doc["objects"]), image)
        queries.append(PopeQuery(idx, int(doc["query"]), doc["label"]))
    ordered = tuple(scenes[i] for i in sorted(scenes))
    return BenchmarkSplit(ordered, tuple(queries), setting)
