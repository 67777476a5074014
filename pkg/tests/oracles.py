"""Independent reference implementations used as test oracles.

Written with plain Python loops and ``math`` so they share no code path with
the vectorised package implementations.
"""

import math

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at vector ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def five_point_diff(f, x, h=1e-4):
    """Fourth-order central differences of ``f`` (scalar or vector valued).

    Truncation error is O(h**4), so a larger step keeps round-off low.
    Returns an array of shape ``(x.size,) + shape(f(x))``.
    """
    x = np.array(x, dtype=float)
    rows = []
    for i in range(x.size):
        old = x[i]
        vals = []
        for k in (2, 1, -1, -2):
            x[i] = old + k * h
            vals.append(np.asarray(f(x), dtype=float))
        x[i] = old
        rows.append((-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h))
    return np.array(rows)


def rel_error(a, b, floor=None):
    """Max elementwise ``|a - b| / max(|a|, |b|, floor)``.

    Entries whose true value is zero (biases feeding a normalization layer,
    say) only carry finite-difference round-off, so the default ``floor`` is
    ``1e-6`` times the largest gradient magnitude (at least ``1e-6``).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if floor is None:
        floor = 1e-6 * max(1.0, float(np.abs(a).max(initial=0)), float(np.abs(b).max(initial=0)))
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale, initial=0.0))


def softmax_row(z, tau=1.0):
    m = max(z)
    e = [math.exp((v - m) / tau) for v in z]
    s = sum(e)
    return [v / s for v in e]


def entropy_row(p):
    return -sum(v * math.log(v) for v in p if v > 0)


def brute_partition(probs, threshold):
    reliable, unreliable = [], []
    for i, row in enumerate(probs):
        h = entropy_row(list(row))
        (reliable if h < threshold else unreliable).append(i)
    return reliable, unreliable


def gem_value(logits, tau):
    total = 0.0
    for row in logits:
        total += tau * tau * entropy_row(softmax_row(list(row), tau))
    return total / len(logits)


def sce_value(pseudo, student, eps=1e-7):
    total = 0.0
    for p, q in zip(pseudo, student):
        fwd = -sum(a * math.log(max(b, eps)) for a, b in zip(p, q))
        rev = -sum(b * math.log(max(a, eps)) for a, b in zip(p, q))
        total += 0.5 * (fwd + rev)
    return total / len(pseudo)


def reg_value(theta, theta0, omega):
    return math.fsum(o * (t - t0) ** 2 for t, t0, o in zip(theta, theta0, omega))


def temperature(logits, s=1.0):
    stds = []
    for row in logits:
        m = sum(row) / len(row)
        stds.append(math.sqrt(sum((v - m) ** 2 for v in row) / len(row)))
    return max(1.0, s * sum(stds) / len(stds))
