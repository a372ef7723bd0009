"""Regenerate the committed fixtures under fixtures/.

    python scripts/make_fixtures.py [--out fixtures]

toy8: 8 classes in 4 superclasses of 2, 8-d blobs, 2x32 MLP trained
adversarially. toy6: 6 classes in 3 superclasses of 2, 4-d, standard training.
cifar100.json: the CIFAR-100 coarse/fine grouping (20 x 5).
"""

import argparse
import json
from collections import Counter
from pathlib import Path

import numpy as np

from superclass_attack.diffmodel import forward, load_weights, save_weights
from superclass_attack.harness import (
    fine_accuracy,
    hierarchical_centroids,
    load_dataset,
    make_blobs,
    save_dataset,
    superclass_accuracy,
)
from superclass_attack.taxonomy import Taxonomy, save_taxonomy
from superclass_attack.training import TrainConfig, train_fixture

# coarse label of each CIFAR-100 fine label, fine labels in alphabetical order
CIFAR100_COARSE = [
    4, 1, 14, 8, 0, 6, 7, 7, 18, 3, 3, 14, 9, 18, 7, 11, 3, 9, 7, 11,
    6, 11, 5, 10, 7, 6, 13, 15, 3, 15, 0, 11, 1, 10, 12, 14, 16, 9, 11, 5,
    5, 19, 8, 8, 15, 13, 14, 17, 18, 10, 16, 4, 17, 4, 2, 0, 17, 4, 18, 17,
    10, 3, 2, 12, 12, 16, 12, 1, 9, 19, 2, 10, 0, 1, 16, 12, 9, 13, 15, 13,
    16, 19, 2, 4, 6, 19, 5, 5, 8, 19, 18, 1, 2, 15, 6, 0, 17, 8, 14, 13,
]

TOY8 = dict(
    groups=[[0, 1], [2, 3], [4, 5], [6, 7]],
    dim=8, group_radius=0.3, class_radius=0.1, spread=0.04,
    train_per_class=150, test_per_class=30,
    hidden=(32, 32), epsilon=0.1,
    train=TrainConfig(epochs=30, batch=64, lr=0.05, adversarial=True, adv_steps=10, adv_epsilon=0.1, adv_alpha=0.025),
)
TOY6 = dict(
    groups=[[0, 1], [2, 3], [4, 5]],
    dim=4, group_radius=0.3, class_radius=0.12, spread=0.04,
    train_per_class=100, test_per_class=20,
    hidden=(32, 32), epsilon=0.1,
    train=TrainConfig(epochs=20, batch=64, lr=0.05),
)


def build_toy(name, spec, out: Path, seed: int):
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    tax = Taxonomy.from_groups(spec["groups"])
    k = tax.num_classes
    centroids = hierarchical_centroids(tax, spec["dim"], spec["group_radius"], spec["class_radius"], seed + 1)
    train = make_blobs(k, spec["train_per_class"], spec["dim"], spec["spread"], seed + 2, centroids)
    test = make_blobs(k, spec["test_per_class"], spec["dim"], spec["spread"], seed + 3, centroids)
    model = train_fixture(train.features, train.labels, spec["hidden"], spec["train"], seed, k)

    save_taxonomy(tax, d / "taxonomy.json")
    save_dataset(train, d / "train.sads")
    save_dataset(test, d / "test.sads")
    save_weights(model, d / "model.samw")

    # goldens come from the files as committed (float32 weights)
    model = load_weights(d / "model.samw")
    test = load_dataset(d / "test.sads", k)
    np.savetxt(d / "golden_logits.txt", forward(model, test.features[:16]), fmt="%.17g")
    info = {
        "clean_superclass_accuracy": superclass_accuracy(model, test, tax),
        "clean_fine_accuracy": fine_accuracy(model, test),
        "epsilon": spec["epsilon"],
        "num_test": len(test),
    }
    (d / "clean.json").write_text(json.dumps(info, indent=2) + "\n")
    print(name, info)


def write_manifest(out: Path):
    eps = TOY8["epsilon"]
    rows = [
        {"method": "clean"},
        {"loss": "standard:ce", "steps": 100, "epsilon": eps, "alpha": eps / 4},
        {"loss": "sum:weighted-cw", "steps": 100, "epsilon": eps, "alpha": eps / 4},
        {"loss": "sum:ce", "steps": 100, "epsilon": eps, "alpha": eps / 4},
        {"loss": "max:cw", "steps": 100, "epsilon": eps, "alpha": eps / 4},
        {"loss": "lse:cw", "steps": 100, "epsilon": eps, "alpha": eps / 4},
        {"loss": "sum:logit-ce", "steps": 100, "epsilon": eps, "alpha": eps / 4},
        # single step uses the whole budget (FGSM)
        {"loss": "lse:cw", "steps": 1, "epsilon": eps, "alpha": eps},
        {"loss": "sum:ce", "steps": 1, "epsilon": eps, "alpha": eps},
        {"method": "iter-sort", "loss": "targeted:ce", "steps": 100, "epsilon": eps, "alpha": eps / 4, "k": 1},
        {"method": "iter-sort", "loss": "targeted:ce", "steps": 100, "epsilon": eps, "alpha": eps / 4, "k": "all"},
        {"method": "iter-seq", "loss": "targeted:ce", "steps": 100, "epsilon": eps, "alpha": eps / 4, "k": "all"},
    ]
    manifest = {"model": "model.samw", "dataset": "test.sads", "taxonomy": "taxonomy.json", "seed": 0, "rows": rows}
    (out / "toy8" / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def write_cifar(out: Path):
    counts = Counter(CIFAR100_COARSE)
    assert len(counts) == 20 and set(counts.values()) == {5}, counts
    groups = [[f for f, c in enumerate(CIFAR100_COARSE) if c == g] for g in range(20)]
    save_taxonomy(Taxonomy.from_groups(groups, 100), out / "cifar100.json")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "fixtures", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    write_cifar(args.out)
    build_toy("toy8", TOY8, args.out, args.seed)
    build_toy("toy6", TOY6, args.out, args.seed)
    write_manifest(args.out)


if __name__ == "__main__":
    main()
