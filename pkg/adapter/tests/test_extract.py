"""Adapter acceptance: emitted files are bit-valid for the classifier package,
dims match the backbone's declared penultimate width, re-extraction is
deterministic."""

import numpy as np
import pytest

pytest.importorskip("featureadapter", reason="adapter package not installed")
pytest.importorskip("urbanfuse", reason="classifier package (the format oracle) not installed")

from PIL import Image

from featureadapter import BACKBONES, AdapterConfig, AdapterError, extract
from featureadapter.extract import parse_image_manifest

# the consumer package is the validity oracle for everything the adapter emits
from urbanfuse.io import load_manifest, read_feature_file


def _write_images(root, spec, size=(260, 300)):
    """spec: list of (object_id, class, n_ground). Returns manifest path."""
    rng = np.random.default_rng(0)
    (root / "imgs").mkdir(parents=True, exist_ok=True)
    lines = []
    for object_id, class_name, n_ground in spec:
        oh_rel = f"imgs/{object_id}_oh.png"
        Image.fromarray(rng.integers(0, 255, size=(*size, 3), dtype=np.uint8)).save(root / oh_rel)
        ground_rels = []
        for i in range(n_ground):
            rel = f"imgs/{object_id}_g{i}.png"
            Image.fromarray(rng.integers(0, 255, size=(*size, 3), dtype=np.uint8)).save(root / rel)
            ground_rels.append(rel)
        lines.append(f"{object_id}\t{class_name}\t{oh_rel}\t{';'.join(ground_rels)}\n")
    path = root / "images.tsv"
    path.write_text("".join(lines), encoding="utf-8")
    return path


def _config(images, out, backbone="alexnet", **kw):
    return AdapterConfig(
        image_manifest=str(images), output_dir=str(out), backbone=backbone,
        weights="random", seed=7, **kw,
    )


def test_declared_penultimate_dims():
    assert BACKBONES["vgg16"][1] == 4096
    assert BACKBONES["alexnet"][1] == 4096
    assert BACKBONES["resnet50"][1] == 2048


def test_extract_validates_through_consumer(tmp_path):
    images = _write_images(tmp_path, [("obj_a", "park", 3), ("obj_b", "shop", 0)])
    config = _config(images, tmp_path / "out")
    manifest_path = extract(config)

    # loads through the classifier's dataset layer with zero errors
    manifest = load_manifest(manifest_path, tmp_path / "out" / "vocabulary.txt")
    assert len(manifest.records) == 2
    assert manifest.dim_overhead == config.feature_dim == 4096
    assert manifest.dim_ground == 4096

    rec_a = manifest.record_by_id("obj_a")
    assert rec_a.n_views == 3  # one vector per ground image, single file
    ground_file = read_feature_file(tmp_path / "out" / "features" / "obj_a_ground.mmlu")
    assert ground_file.shape == (3, 4096)
    rec_b = manifest.record_by_id("obj_b")
    assert rec_b.n_views == 0  # missing modality survives the round trip


def test_re_extraction_is_deterministic(tmp_path):
    images = _write_images(tmp_path, [("obj_a", "park", 2)])
    for run in ("one", "two"):
        extract(_config(images, tmp_path / run))
    for rel in ("manifest.tsv", "vocabulary.txt", "features/obj_a_ground.mmlu",
                "features/obj_a_overhead.mmlu"):
        assert (tmp_path / "one" / rel).read_bytes() == (tmp_path / "two" / rel).read_bytes()


def test_vgg16_exports_4096(tmp_path):
    images = _write_images(tmp_path, [("obj_a", "park", 1)])
    extract(_config(images, tmp_path / "out", backbone="vgg16"))
    vec = read_feature_file(tmp_path / "out" / "features" / "obj_a_overhead.mmlu")
    assert vec.shape == (1, 4096)


def test_resnet50_exports_2048(tmp_path):
    images = _write_images(tmp_path, [("obj_a", "park", 1)])
    extract(_config(images, tmp_path / "out", backbone="resnet50"))
    vec = read_feature_file(tmp_path / "out" / "features" / "obj_a_ground.mmlu")
    assert vec.shape == (1, 2048)


def test_unreadable_ground_image_skipped(tmp_path, caplog):
    images = _write_images(tmp_path, [("obj_a", "park", 2), ("obj_b", "shop", 1)])
    (tmp_path / "imgs" / "obj_a_g1.png").write_bytes(b"not an image")
    extract(_config(images, tmp_path / "out"))
    manifest = load_manifest(tmp_path / "out" / "manifest.tsv", tmp_path / "out" / "vocabulary.txt")
    assert manifest.record_by_id("obj_a").n_views == 1


def test_unreadable_overhead_omits_object(tmp_path):
    images = _write_images(tmp_path, [("obj_a", "park", 1), ("obj_b", "shop", 1), ("obj_c", "park", 1)])
    (tmp_path / "imgs" / "obj_a_oh.png").unlink()
    extract(_config(images, tmp_path / "out"))
    manifest = load_manifest(tmp_path / "out" / "manifest.tsv", tmp_path / "out" / "vocabulary.txt")
    assert [rec.object_id for rec in manifest.records] == ["obj_b", "obj_c"]


def test_all_ground_unreadable_becomes_missing_modality(tmp_path):
    images = _write_images(tmp_path, [("obj_a", "park", 1), ("obj_b", "shop", 1)])
    (tmp_path / "imgs" / "obj_a_g0.png").write_bytes(b"junk")
    extract(_config(images, tmp_path / "out"))
    manifest = load_manifest(tmp_path / "out" / "manifest.tsv", tmp_path / "out" / "vocabulary.txt")
    assert manifest.record_by_id("obj_a").n_views == 0


def test_manifest_parsing_errors(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("only\tthree\tfields\n", encoding="utf-8")
    with pytest.raises(AdapterError, match="expected 4"):
        parse_image_manifest(bad)
    bad.write_text("a\tc\tx.png\t\na\tc\ty.png\t\n", encoding="utf-8")
    with pytest.raises(AdapterError, match="duplicate"):
        parse_image_manifest(bad)


def test_config_validation(tmp_path):
    with pytest.raises(AdapterError, match="unknown backbone"):
        AdapterConfig(image_manifest="x", output_dir="y", backbone="squeezenet")
    with pytest.raises(AdapterError, match="feature layer"):
        images = _write_images(tmp_path, [("obj_a", "park", 0)])
        extract(_config(images, tmp_path / "out", feature_layer="fc9"))
