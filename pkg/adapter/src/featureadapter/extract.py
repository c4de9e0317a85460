"""Convert per-object image sets into urbanfuse feature files.

Reads an image manifest (tab-separated: object_id, class name, overhead image
path, semicolon-joined ground image paths), pushes every image through a
frozen torchvision backbone, and writes the binary feature files plus a
dataset manifest/vocabulary in the exact on-disk formats the classifier
consumes. Inference preprocessing is deterministic: resize + center crop for
ground pictures, a plain resize for overhead tiles, no augmentation.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

log = logging.getLogger("featureadapter")

FEATURE_MAGIC = b"MMLU"
FEATURE_VERSION = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class AdapterError(RuntimeError):
    """Unrecoverable extraction failure (bad config, unloadable backbone)."""


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    feature_dim: int
    builder: object  # torchvision constructor
    weights_enum: object  # default pretrained weights


def _vgg16_features(model: torch.nn.Module, layer: str) -> torch.nn.Module:
    # fc6 = first 4096-dim fully connected output, fc7 = second (penultimate)
    cut = {"fc6": 3, "fc7": 6}.get(layer)
    if cut is None:
        raise AdapterError(f"vgg16 feature layer must be fc6 or fc7, got {layer!r}")
    model.classifier = model.classifier[:cut]
    return model


def _alexnet_features(model: torch.nn.Module, layer: str) -> torch.nn.Module:
    cut = {"fc6": 3, "fc7": 6}.get(layer)
    if cut is None:
        raise AdapterError(f"alexnet feature layer must be fc6 or fc7, got {layer!r}")
    model.classifier = model.classifier[:cut]
    return model


def _resnet50_features(model: torch.nn.Module, layer: str) -> torch.nn.Module:
    if layer not in ("pool", "fc7"):  # pooled 2048-dim vector feeds the classifier
        raise AdapterError(f"resnet50 exposes only the pooled features, got {layer!r}")
    model.fc = torch.nn.Identity()
    return model


BACKBONES = {
    "vgg16": (models.vgg16, 4096, _vgg16_features),
    "alexnet": (models.alexnet, 4096, _alexnet_features),
    "resnet50": (models.resnet50, 2048, _resnet50_features),
}


@dataclass(frozen=True)
class AdapterConfig:
    image_manifest: str
    output_dir: str
    backbone: str = "vgg16"
    weights: str = "pretrained"  # "pretrained" | "random" | path to a state dict
    feature_layer: str = "fc7"  # which fully connected output feeds the vectors
    ground_resize: int = 256
    ground_crop: int = 224
    overhead_size: int = 240
    normalization: str = "imagenet"  # "imagenet" | "none"
    seed: int = 0  # initializes the backbone when weights == "random"
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise AdapterError(f"unknown backbone {self.backbone!r}; choose from {sorted(BACKBONES)}")
        for name in ("ground_resize", "ground_crop", "overhead_size", "batch_size"):
            if getattr(self, name) <= 0:
                raise AdapterError(f"{name} must be positive")
        if self.normalization not in ("imagenet", "none"):
            raise AdapterError(f"normalization must be 'imagenet' or 'none', got {self.normalization!r}")

    @property
    def feature_dim(self) -> int:
        return BACKBONES[self.backbone][1]


def write_feature_file(vectors: np.ndarray, path: Path) -> None:
    """Emit the classifier's binary feature format (f32, little-endian)."""
    arr = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
    count, dim = arr.shape
    if count < 1 or dim < 1:
        raise AdapterError(f"empty feature batch for {path}")
    if not np.isfinite(arr).all():
        raise AdapterError(f"non-finite features for {path}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", FEATURE_MAGIC, FEATURE_VERSION, dim, count))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def load_backbone(config: AdapterConfig) -> torch.nn.Module:
    """Build the frozen feature extractor; any load failure aborts."""
    builder, _, strip = BACKBONES[config.backbone]
    try:
        if config.weights == "pretrained":
            model = builder(weights="DEFAULT")
        elif config.weights == "random":
            torch.manual_seed(config.seed)
            model = builder(weights=None)
        else:
            model = builder(weights=None)
            state = torch.load(config.weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
    except AdapterError:
        raise
    except Exception as exc:
        raise AdapterError(f"backbone {config.backbone!r} failed to load: {exc}") from exc
    model = strip(model, config.feature_layer)
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return model.to(config.device)


def _transforms(config: AdapterConfig):
    tail = [transforms.ToTensor()]
    if config.normalization == "imagenet":
        tail.append(transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD))
    ground = transforms.Compose(
        [transforms.Resize(config.ground_resize), transforms.CenterCrop(config.ground_crop), *tail]
    )
    overhead = transforms.Compose(
        [transforms.Resize((config.overhead_size, config.overhead_size)), *tail]
    )
    return ground, overhead


def _load_image(path: Path):
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except Exception as exc:
        log.warning("skipping unreadable image %s (%s)", path, exc)
        return None


def _embed(model, tensors, config: AdapterConfig) -> np.ndarray:
    out = []
    with torch.no_grad():
        for start in range(0, len(tensors), config.batch_size):
            batch = torch.stack(tensors[start : start + config.batch_size]).to(config.device)
            out.append(model(batch).cpu().numpy().astype(np.float32))
    return np.concatenate(out, axis=0)


def parse_image_manifest(path) -> list[tuple[str, str, str, list[str]]]:
    entries = []
    seen = set()
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise AdapterError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
        object_id, class_name, overhead, ground_field = fields
        if not object_id or object_id in seen:
            raise AdapterError(f"{path}:{lineno}: missing or duplicate object_id {object_id!r}")
        seen.add(object_id)
        ground = [p for p in ground_field.split(";") if p] if ground_field else []
        entries.append((object_id, class_name, overhead, ground))
    if not entries:
        raise AdapterError(f"{path}: no records")
    return entries


def extract(config: AdapterConfig) -> Path:
    """Run the extraction; returns the emitted dataset manifest path.

    Objects whose overhead image cannot be read are dropped (with a warning);
    unreadable ground images are skipped individually, and an object whose
    ground images all fail becomes a record without the ground modality.
    """
    entries = parse_image_manifest(config.image_manifest)
    base = Path(config.image_manifest).parent
    out_dir = Path(config.output_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)

    model = load_backbone(config)
    ground_tf, overhead_tf = _transforms(config)

    vocabulary: list[str] = []
    lines = []
    for object_id, class_name, overhead_rel, ground_rels in entries:
        overhead_img = _load_image(base / overhead_rel)
        if overhead_img is None:
            log.warning("omitting object %s: overhead image unreadable", object_id)
            continue
        overhead_vec = _embed(model, [overhead_tf(overhead_img)], config)
        oh_out = f"features/{object_id}_overhead.mmlu"
        write_feature_file(overhead_vec, out_dir / oh_out)

        tensors = []
        for rel in ground_rels:
            img = _load_image(base / rel)
            if img is not None:
                tensors.append(ground_tf(img))
        if tensors:
            ground_vecs = _embed(model, tensors, config)
            g_out = f"features/{object_id}_ground.mmlu"
            write_feature_file(ground_vecs, out_dir / g_out)
        else:
            g_out = ""
        if class_name not in vocabulary:
            vocabulary.append(class_name)
        lines.append(f"{object_id}\t{class_name}\t{oh_out}\t{g_out}\n")

    if not lines:
        raise AdapterError("no objects survived extraction")
    manifest_path = out_dir / "manifest.tsv"
    manifest_path.write_text("".join(lines), encoding="utf-8")
    (out_dir / "vocabulary.txt").write_text("".join(f"{n}\n" for n in vocabulary), encoding="utf-8")
    return manifest_path
