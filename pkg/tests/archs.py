"""Random sequential architectures for property tests."""

import numpy as np

from prefiqs import model as M


def random_model(rng, allow_conv=True):
    """Draw a random valid sequential model with float32 params."""
    layers, params = [], []

    def dense(i, o, head=False):
        layers.append(M.dense_layer(i, o, embedding_head=head))
        params.append([rng.standard_normal((o, i)).astype(np.float32),
                       rng.standard_normal(o).astype(np.float32)])

    def bn(c):
        layers.append(M.batchnorm_layer(c))
        params.append([rng.uniform(0.5, 1.5, c).astype(np.float32), rng.standard_normal(c).astype(np.float32),
                       rng.standard_normal(c).astype(np.float32), rng.uniform(0.5, 2, c).astype(np.float32)])

    def plain(spec):
        layers.append(spec)
        params.append([])

    if allow_conv and rng.random() < 0.5:
        c, h = int(rng.integers(1, 4)), int(rng.integers(4, 8))
        input_shape = (c, h, h)
        for _ in range(int(rng.integers(1, 3))):
            co, k = int(rng.integers(1, 5)), int(rng.integers(1, 4))
            pad = int(rng.integers(0, 2))
            if h + 2 * pad < k:
                k = 1
            layers.append(M.conv2d_layer(c, co, k, 1, pad))
            params.append([rng.standard_normal((co, c, k, k)).astype(np.float32),
                           rng.standard_normal(co).astype(np.float32)])
            h = h + 2 * pad - k + 1
            c = co
            if rng.random() < 0.5:
                bn(c)
            if rng.random() < 0.5:
                plain(M.relu_layer())
        if rng.random() < 0.5:
            plain(M.global_avg_pool_layer())
            width = c
        else:
            plain(M.flatten_layer())
            width = c * h * h
    else:
        width = int(rng.integers(1, 9))
        input_shape = (width,)
    for _ in range(int(rng.integers(0, 3))):
        o = int(rng.integers(1, 9))
        dense(width, o)
        width = o
        if rng.random() < 0.5:
            bn(width)
        if rng.random() < 0.7:
            plain(M.relu_layer())
    dense(width, int(rng.integers(1, 7)), head=True)
    plain(M.l2_normalize_layer())
    return M.Model(layers, params, input_shape)
