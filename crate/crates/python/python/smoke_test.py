"""Quick end-to-end check of the pypairlearn extension."""

import json
import math

import pypairlearn as pl


def main():
    rows, labels = pl.blobs(classes=3, n_per_class=40, dim=2, seed=5)
    assert len(rows) == 120 and sorted(set(labels)) == [0, 1, 2]

    assert pl.pairs(3) == [(0, 1), (0, 2), (1, 2)]
    assert pl.hungarian([[4.0, 1.0], [2.0, 3.0]]) == [1, 0]
    assert pl.clustering_accuracy([[5, 0], [0, 5]]) == 1.0
    assert abs(pl.nmi([[5, 0], [0, 5]]) - 1.0) < 1e-12
    assert pl.ndc([30, 30, 30, 0]) == 3
    alpha, beta = pl.ssl_weights(80, 4000)
    assert alpha + beta == 1.0 and alpha < beta

    probs = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    assert pl.mcl_loss(probs, [0, 0, 1]) < 1e-6
    assert pl.mcl_loss(probs, [0, 1, 1]) > 1.0
    assert math.isfinite(pl.kcl_loss(probs, [0, 0, 1]))
    assert pl.cross_entropy(probs, [0, 0, 1]) < 1e-6

    model = pl.Mlp([2, 16, 3], seed=0)
    config = json.dumps({"objective": "mcl", "epochs": 20, "decay_epochs": [], "learning_rate": 0.01})
    trained, losses = pl.train_supervised(model, rows, labels, config)
    assert len(losses) == 20 and losses[-1] < losses[0]
    accuracy, nmi, ndc = trained.evaluate(rows, labels)
    print(f"accuracy={accuracy:.3f} nmi={nmi:.3f} ndc={ndc} params={trained.parameter_count}")
    assert accuracy > 0.9

    try:
        pl.Mlp([2], seed=0)
    except ValueError:
        pass
    else:
        raise AssertionError("a one-layer spec should be rejected")
    print("ok")


if __name__ == "__main__":
    main()
