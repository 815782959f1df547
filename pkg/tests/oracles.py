"""Independent reference implementations used as test oracles.

Everything here is written with plain loops and no code from the package, so
agreement is evidence rather than tautology.
"""

import math

import numpy as np


def conv1d_loops(x, w, b=None, stride=1, dilation=1, pad_left=0, pad_right=0, groups=1):
    batch, cin, length = x.shape
    cout, cin_g, k = w.shape
    xp = np.zeros((batch, cin, length + pad_left + pad_right))
    xp[:, :, pad_left:pad_left + length] = x
    span = dilation * (k - 1) + 1
    lout = (xp.shape[2] - span) // stride + 1
    out = np.zeros((batch, cout, lout))
    cout_g = cout // groups
    for n in range(batch):
        for o in range(cout):
            g = o // cout_g
            for t in range(lout):
                acc = 0.0
                for ci in range(cin_g):
                    for j in range(k):
                        acc += w[o, ci, j] * xp[n, g * cin_g + ci, t * stride + j * dilation]
                out[n, o, t] = acc + (b[o] if b is not None else 0.0)
    return out


def conv_transpose1d_loops(x, w, stride=1):
    batch, c, length = x.shape
    _, cout, k = w.shape
    out = np.zeros((batch, cout, (length - 1) * stride + k))
    for n in range(batch):
        for ci in range(c):
            for t in range(length):
                for o in range(cout):
                    for j in range(k):
                        out[n, o, t * stride + j] += x[n, ci, t] * w[ci, o, j]
    return out


def operating_points(scores, labels):
    """(threshold, miss rate, false-alarm rate) for every distinct score and +inf.

    Accept iff score >= threshold.
    """
    tar = [s for s, l in zip(scores, labels) if l]
    non = [s for s, l in zip(scores, labels) if not l]
    points = []
    for t in sorted(set(float(s) for s in scores)) + [math.inf]:
        miss = sum(1 for s in tar if s < t) / len(tar)
        fa = sum(1 for s in non if s >= t) / len(non)
        points.append((t, miss, fa))
    return points


def eer_brute(scores, labels):
    points = operating_points(scores, labels)
    for (t0, m0, f0), (t1, m1, f1) in zip(points, points[1:]):
        d0, d1 = m0 - f0, m1 - f1
        if d0 == 0:
            return m0
        if d0 < 0 < d1:
            # straight line between the two operating points meets the diagonal
            lam = -d0 / (d1 - d0)
            return m0 + lam * (m1 - m0)
        if d1 == 0:
            return m1
    return points[-1][1]


def min_dcf_brute(scores, labels, p_target=0.05, c_miss=1.0, c_fa=1.0):
    best = min(c_miss * p_target * m + c_fa * (1 - p_target) * f
               for _, m, f in operating_points(scores, labels))
    return best / min(c_miss * p_target, c_fa * (1 - p_target))


def central_difference(f, x, eps=1e-6):
    """Numeric gradient of a scalar numpy function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        up = f(x)
        x[i] = orig - eps
        down = f(x)
        x[i] = orig
        g[i] = (up - down) / (2 * eps)
    return g


def hamming(n):
    return [0.54 - 0.46 * math.cos(2 * math.pi * i / (n - 1)) for i in range(n)]
