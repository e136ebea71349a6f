"""Regenerate the golden sample files in this directory.

The files are committed; this script documents how they were made. Any change
in its output means the on-disk formats changed.
"""

import json
from pathlib import Path

import numpy as np

from prefiqs import model as M
from prefiqs import pruning

HERE = Path(__file__).resolve().parent


def tiny_model():
    W1 = np.array([[0.5, -0.25, 0.125], [1.0, 0.0, -0.5], [-0.75, 0.5, 0.25], [0.0625, 0.375, -1.0]])
    b1 = np.array([0.1, -0.2, 0.0, 0.05])
    bn = [np.array([1.0, 0.5, 2.0, 1.0]), np.array([0.0, 0.1, -0.1, 0.0]),
          np.array([0.0, 0.2, 0.0, -0.1]), np.array([1.0, 4.0, 0.25, 1.0])]
    W2 = np.array([[1.0, -0.5, 0.25, 0.0], [0.0, 0.75, -0.125, 1.5]])
    b2 = np.array([0.0, 0.01])
    layers = [M.dense_layer(3, 4), M.batchnorm_layer(4), M.relu_layer(),
              M.dense_layer(4, 2, embedding_head=True), M.l2_normalize_layer()]
    params = [[W1, b1], bn, [], [W2, b2], []]
    params = [[np.asarray(t, np.float32) for t in p] for p in params]
    return M.Model(layers, params, (3,))


def main():
    m = tiny_model()
    (HERE / "tiny.pfqm").write_bytes(M.save_model(m))
    x = [1.0, -2.0, 0.5]
    e = M.forward(m, np.array(x, np.float32))
    with open(HERE / "tiny.json", "w") as fh:
        json.dump({"input": x, "embedding": [float(v) for v in e], "manifest": M.model_manifest(m)},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    (HERE / "tiny_l1_0.5.pfqmask").write_bytes(pruning.save_mask(pruning.build_mask_l1_global(m, 0.5)))
    (HERE / "tiny_random_0.3_seed7.pfqmask").write_bytes(pruning.save_mask(pruning.build_mask_random(m, 0.3, 7)))


if __name__ == "__main__":
    main()
