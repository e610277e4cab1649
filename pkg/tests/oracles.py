"""Slow, obviously-correct reference implementations used as test oracles."""

import numpy as np


def depthwise_loop(x, V):
    """Five nested loops over channel, output row, output column and kernel taps."""
    C, H, W = x.shape
    k = V.shape[1]
    p = k // 2
    out = np.zeros((C, H, W))
    for c in range(C):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for m in range(k):
                    for n in range(k):
                        r, q = i + m - p, j + n - p
                        if 0 <= r < H and 0 <= q < W:
                            acc += x[c, r, q] * V[c, m, n, i, j]
                out[c, i, j] = acc
    return out


def miou_loop(pred, gt, num_labels):
    """Per-class IoU by explicit pixel counting; mIoU over classes present in gt."""
    pred, gt = np.ravel(pred), np.ravel(gt)
    ious, present = [], []
    for c in range(num_labels):
        tp = fp = fn = 0
        for p, g in zip(pred, gt):
            tp += p == c and g == c
            fp += p == c and g != c
            fn += p != c and g == c
        ious.append(tp / (tp + fp + fn) if tp + fp + fn else float("nan"))
        if tp + fn:
            present.append(ious[-1])
    acc = sum(int(p == g) for p, g in zip(pred, gt)) / len(gt)
    return ious, sum(present) / len(present), acc


def receptive_field_trials(net, block_id, trials=20, seed=0, far=True):
    """Flip one label and report, per trial, whether V at a probe pixel moved.

    The flip lands at Chebyshev distance > 2 from the probe (``far``) or
    within distance 2 otherwise, measured at block resolution.  The layout
    pixel flipped is the one nearest-neighbour downsampling keeps for that
    block cell.
    """
    from ccfpse.tensor import no_grad

    rng = np.random.default_rng(seed)
    spec = net.specs[block_id]
    H, W = spec.height, spec.width
    f = 2 ** (net.levels - 1 - spec.stage)
    changed = []
    for _ in range(trials):
        y = rng.integers(0, net.num_labels, (1, H * f, W * f))
        ii, jj = np.mgrid[0:H, 0:W]
        while True:
            pi, pj = rng.integers(0, H), rng.integers(0, W)
            d = np.maximum(abs(ii - pi), abs(jj - pj))
            cands = np.argwhere(d > 2) if far else np.argwhere((d > 0) & (d <= 2))
            if len(cands):
                break
        fi, fj = cands[rng.integers(len(cands))]
        y2 = y.copy()
        y2[0, fi * f, fj * f] = (y[0, fi * f, fj * f] + rng.integers(1, net.num_labels)) % net.num_labels
        with no_grad():
            v1 = net(y)[block_id].V.data[0, ..., pi, pj]
            v2 = net(y2)[block_id].V.data[0, ..., pi, pj]
        changed.append(not np.array_equal(v1, v2))
    return changed
