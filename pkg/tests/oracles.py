"""Slow, obviously-correct reference implementations used as test oracles."""
import numpy as np


def pairwise_auc(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly; ties count one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


def scan_youden(scores, labels):
    """Try every observed score as a threshold; ties keep the largest threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    best_t, best_j = None, -np.inf
    for t in sorted(set(s.tolist()), reverse=True):
        p = s >= t
        j = p[y == 1].mean() + (~p)[y == 0].mean() - 1
        if j > best_j:
            best_t, best_j = t, j
    return best_t, best_j


def random_instance(rng, n_max=500):
    """Scores with plenty of ties, both classes present."""
    n = int(rng.integers(2, n_max + 1))
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    rng.shuffle(y)
    levels = int(rng.integers(1, 20))
    scores = rng.integers(0, levels, n) / levels if rng.random() < 0.5 else rng.normal(size=n)
    return scores, y
