import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from urbanfuse.io import write_feature_file


@pytest.fixture
def make_dataset(tmp_path):
    """Builder writing a small dataset to disk.

    spec: list of (object_id, class_name, overhead_vector, list_of_ground_vectors);
    an empty ground list marks the missing modality. Returns (manifest_path,
    vocab_path).
    """

    def build(spec, vocab_names, subdir="data"):
        root = tmp_path / subdir
        (root / "features").mkdir(parents=True, exist_ok=True)
        lines = []
        for object_id, class_name, overhead, ground in spec:
            oh_rel = f"features/{object_id}_oh.mmlu"
            write_feature_file(np.asarray(overhead, dtype=np.float32)[None, :], root / oh_rel)
            if len(ground):
                g_rel = f"features/{object_id}_g.mmlu"
                write_feature_file(np.asarray(ground, dtype=np.float32), root / g_rel)
            else:
                g_rel = ""
            lines.append(f"{object_id}\t{class_name}\t{oh_rel}\t{g_rel}\n")
        manifest_path = root / "manifest.tsv"
        vocab_path = root / "vocabulary.txt"
        manifest_path.write_text("".join(lines), encoding="utf-8")
        vocab_path.write_text("".join(f"{n}\n" for n in vocab_names), encoding="utf-8")
        return manifest_path, vocab_path

    return build
