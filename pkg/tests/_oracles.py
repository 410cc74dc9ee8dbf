"""Independent reference implementations used as test oracles.

These deliberately avoid the library's own code paths: the point is to check
the closed-form implementations against brute force.
"""

import itertools

import numpy as np
from scipy.optimize import linprog


def emd_lp(a_mass, b_mass, bin_width):
    """1-D EMD via the transportation LP: minimize sum(f_ij * |i-j| * width)
    subject to row sums a, column sums b, f >= 0."""
    a = np.asarray(a_mass, dtype=float)
    b = np.asarray(b_mass, dtype=float)
    nb = len(a)
    cost = np.abs(np.subtract.outer(np.arange(nb), np.arange(nb))).ravel() * bin_width
    a_eq = []
    for i in range(nb):  # row sums
        row = np.zeros((nb, nb))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
    for j in range(nb):  # column sums
        col = np.zeros((nb, nb))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
    res = linprog(cost, A_eq=np.array(a_eq), b_eq=np.concatenate([a, b]), method="highs")
    assert res.success, res.message
    return res.fun


def brute_force_histogram(points, kind, lo, hi, bins):
    """Shape distribution by plain nested enumeration of all tuples."""
    from lidarshape.shapedist import ARITY, measure

    arity = ARITY[kind]
    width = (hi - lo) / bins
    mass = np.zeros(bins)
    for combo in itertools.combinations(range(len(points)), arity):
        v = measure(kind, points[list(combo)])
        idx = min(max(int(np.floor((v - lo) / width)), 0), bins - 1)
        mass[idx] += 1.0
    return mass / mass.sum()
