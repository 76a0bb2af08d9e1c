import numpy as np
import pytest

from repscope import net, patterns, synthetic
from repscope.tensorio import DatasetManifest, ManifestRecord


@pytest.fixture(scope="session")
def toy_artifacts():
    """One shared end-to-end run of the deterministic toy pipeline."""
    spec = synthetic.toy_network()
    manifest, images = synthetic.toy_dataset(n_per_class=30)
    traces = [net.forward(spec, images[r.image_id], r.image_id) for r in manifest.records]
    vectors = patterns.build_response_vectors(traces)
    thresholds = patterns.class_thresholds(vectors, manifest)
    pats = patterns.build_patterns(vectors, thresholds, manifest)
    return {
        "spec": spec,
        "manifest": manifest,
        "images": images,
        "traces": traces,
        "vectors": vectors,
        "thresholds": thresholds,
        "patterns": pats,
    }


def make_manifest(classes: dict[int, list[str]], class_names: dict[int, str] | None = None):
    """In-memory manifest from class_id -> image_id lists."""
    records = []
    for class_id in sorted(classes):
        name = class_names[class_id] if class_names else f"class{class_id}"
        for image_id in classes[class_id]:
            records.append(ManifestRecord(image_id, class_id, name, f"{image_id}.rstf", "train"))
    return DatasetManifest(records)


def make_pattern(image_id, layer, class_id, values, threshold=0.0):
    return patterns.ActivityPattern(image_id, layer, class_id, threshold, np.asarray(values, dtype=np.float64))
