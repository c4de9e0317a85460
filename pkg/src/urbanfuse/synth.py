"""Synthetic multimodal datasets with controllable cross-view structure.

Each class draws a shared latent center plus one exclusive center per view;
an object's features are a fixed linear map of (shared + exclusive) signal
plus Gaussian noise. The noise has two parts: an object-level jitter drawn
once per object and visible from both views (an object's idiosyncrasies show
up from above and from the street), and i.i.d. per-feature noise. Both scale
with ``noise_sigma``, so with zero noise and zero exclusive signal all
objects of a class are identical per view, which makes the generator easy to
reason about in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import (
    LANDUSE_CLASSES,
    DatasetManifest,
    LabelVocabulary,
    load_manifest,
    write_feature_file,
    write_vocabulary,
)


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 16
    objects_per_class: int = 40
    dim_ground: int = 128
    dim_overhead: int = 96
    min_views: int = 1
    max_views: int = 5
    shared_signal: float = 0.6  # strength of the class center common to both views
    exclusive_signal_ground: float = 0.0  # per-view class signal, ground
    exclusive_signal_overhead: float = 0.1  # per-view class signal, overhead
    noise_sigma: float = 0.9
    object_jitter: float = 0.15  # cross-view object-level noise share, scaled by noise_sigma
    missing_ground_fraction: float = 0.0
    latent_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.objects_per_class < 1:
            raise ValueError("objects_per_class must be >= 1")
        if self.dim_ground < 2 or self.dim_overhead < 2:
            raise ValueError("feature dims must be >= 2")
        if not 1 <= self.min_views <= self.max_views:
            raise ValueError("need 1 <= min_views <= max_views")
        for name in ("shared_signal", "exclusive_signal_ground", "exclusive_signal_overhead", "object_jitter"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0.0 <= self.missing_ground_fraction <= 1.0:
            raise ValueError("missing_ground_fraction must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")

    @property
    def num_objects(self) -> int:
        return self.num_classes * self.objects_per_class


# Per-view noise on ground images is larger than the pooled descriptor's:
# averaging N_u views divides it by ~sqrt(N_u). This factor keeps the pooled
# ground descriptor's noise comparable to the overhead one's.
GROUND_NOISE_FACTOR = 1.8


def default_vocabulary(num_classes: int) -> LabelVocabulary:
    """The 16 urban landuse names when they suffice, generic names otherwise."""
    if num_classes <= len(LANDUSE_CLASSES):
        return LabelVocabulary(LANDUSE_CLASSES[:num_classes])
    return LabelVocabulary(tuple(f"class{i:03d}" for i in range(num_classes)))


def generate(config: SynthConfig, out_dir) -> DatasetManifest:
    """Write a complete synthetic dataset and return the validated manifest.

    Identical configs produce bitwise-identical files: all randomness flows
    from one seeded generator in a fixed draw order (class latents, linear
    maps, view counts, missing mask, then per-object noise).
    """
    out_dir = Path(out_dir)
    features_dir = out_dir / "features"
    features_dir.mkdir(parents=True, exist_ok=True)

    cfg = config
    rng = np.random.default_rng(cfg.seed)
    shared_centers = rng.normal(size=(cfg.num_classes, cfg.latent_dim))
    excl_ground = rng.normal(size=(cfg.num_classes, cfg.latent_dim))
    excl_overhead = rng.normal(size=(cfg.num_classes, cfg.latent_dim))
    map_ground = rng.normal(size=(cfg.latent_dim, cfg.dim_ground)) / math.sqrt(cfg.latent_dim)
    map_overhead = rng.normal(size=(cfg.latent_dim, cfg.dim_overhead)) / math.sqrt(cfg.latent_dim)

    n = cfg.num_objects
    view_counts = rng.integers(cfg.min_views, cfg.max_views + 1, size=n)
    n_missing = math.floor(cfg.missing_ground_fraction * n + 0.5)
    missing = np.zeros(n, dtype=bool)
    if n_missing:
        missing[rng.choice(n, size=n_missing, replace=False)] = True
    view_counts[missing] = 0

    vocabulary = default_vocabulary(cfg.num_classes)
    jitter_scale = cfg.object_jitter * cfg.noise_sigma
    lines = []
    for obj in range(n):
        label = obj // cfg.objects_per_class
        object_id = f"obj{obj:05d}"
        # object-level jitter is visible from both perspectives; i.i.d. noise is not
        jitter = jitter_scale * rng.normal(size=cfg.latent_dim)
        signal_ground = (
            cfg.shared_signal * shared_centers[label] + cfg.exclusive_signal_ground * excl_ground[label] + jitter
        )
        signal_overhead = (
            cfg.shared_signal * shared_centers[label] + cfg.exclusive_signal_overhead * excl_overhead[label] + jitter
        )
        overhead = signal_overhead @ map_overhead + cfg.noise_sigma * rng.normal(size=cfg.dim_overhead)
        overhead_rel = f"features/{object_id}_overhead.mmlu"
        write_feature_file(overhead[None, :], out_dir / overhead_rel)

        if view_counts[obj] > 0:
            base = signal_ground @ map_ground
            sigma_g = GROUND_NOISE_FACTOR * cfg.noise_sigma
            views = base[None, :] + sigma_g * rng.normal(size=(view_counts[obj], cfg.dim_ground))
            ground_rel = f"features/{object_id}_ground.mmlu"
            write_feature_file(views, out_dir / ground_rel)
        else:
            ground_rel = ""
        lines.append(f"{object_id}\t{vocabulary.names[label]}\t{overhead_rel}\t{ground_rel}\n")

    manifest_path = out_dir / "manifest.tsv"
    vocab_path = out_dir / "vocabulary.txt"
    manifest_path.write_text("".join(lines), encoding="utf-8")
    write_vocabulary(vocabulary, vocab_path)
    return load_manifest(manifest_path, vocab_path)
