"""Smoke test for the tmascore_py extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import json
import random
import tempfile

import tmascore_py as tm


def main():
    hist = tm.spatial_histogram([[0, 1], [1, 1]], levels=2, direction="45", distance=1)
    assert hist == [[0, 0], [0, 1]], hist
    assert abs(tm.confidence([60, 30, 10, 0], 100) - 0.30) < 1e-12

    rng = random.Random(0)
    feats, labels = [], []
    for i in range(80):
        c = i % 4
        feats.append([float(c == j) + rng.uniform(-0.4, 0.4) for j in range(4)])
        labels.append(c)
    forest = tm.Forest.train(feats, labels, trees=30, seed=1)
    assert forest.n_trees == 30 and forest.dimension == 4
    votes = forest.predict_votes(feats[0])
    assert sum(votes) == 30
    preds = forest.predict(feats)
    assert sum(p == l for p, l in zip(preds, labels)) >= 70
    again = tm.Forest.from_json(forest.to_json())
    assert again.predict(feats) == preds
    kept = forest.transferable(feats[:20], labels[:20], 0.1)
    assert all(0 <= k < 20 for k in kept)

    rho = tm.separation_ratio(feats, labels)
    assert 0 < rho < float("inf")
    scores, explained = tm.pca_project(feats)
    assert len(scores) == 80 and explained[0] >= explained[1]

    try:
        tm.Forest.train(feats, labels[:-1])
    except ValueError:
        pass
    else:
        raise AssertionError("mismatched lengths accepted")
    try:
        tm.extract_features("/no/such/image.png")
    except OSError:
        pass
    else:
        raise AssertionError("missing file accepted")

    with tempfile.TemporaryDirectory() as d:
        spec = json.loads(open("crates/core/data/benchmark_spec.json").read())
        spec["image_size"] = 32
        spec["images_per_class"] = 6
        for src in spec["sources"]:
            src["images_per_class"] = 3
        manifests = tm.generate_synthetic(d, json.dumps(spec), seed=3)
        assert set(manifests) == {"primary", "aux_a", "aux_b", "aux_c"}
        first = open(manifests["primary"]).read().splitlines()[1].split(",")[0]
        assert len(tm.extract_features(f"{d}/{first}")) == 2601
        aux = {k: v for k, v in manifests.items() if k != "primary"}
        report = json.loads(tm.transfer_score(manifests["primary"], aux, runs=1, trees=20))
        assert report["runs"] == 1

    print("python smoke test passed")


if __name__ == "__main__":
    main()
