"""
Propagation and local false discovery rates
===========================================

Two building blocks on toy data: random walk with restart over a small
graph, and the empirical-Bayes lfdr that later decides which nodes may
join the seed set.
"""

import numpy as np

from subdyve import lfdr
from subdyve.propagate import propagate, propagate_exact
from subdyve.simnet import SimilarityGraph, column_normalize

# a path a - b - c - d with the walk restarting at a
g = SimilarityGraph(list("abcd"), [0, 1, 2], [1, 2, 3], [1.0, 1.0, 1.0])
W = column_normalize(g)
p0 = np.array([1.0, 0.0, 0.0, 0.0])
for alpha in (0.1, 0.5, 0.9):
    p = propagate(W, p0, alpha)
    print(f"alpha={alpha}: {np.round(p, 4)}  (closed form agrees: {np.allclose(p, propagate_exact(W, p0, alpha))})")

# a larger restart keeps the mass close to the seed; a small one lets it spread

# two-group mixture: 90% N(0, 1) nulls, 10% signals around 2.5
rng = np.random.default_rng(0)
null = rng.random(5000) < 0.9
z = np.where(null, rng.standard_normal(5000), rng.normal(2.5, 1.0, 5000))
model = lfdr.fit(z, pi0=0.9)

for x in (0.0, 2.0, 3.0, 4.0):
    print(f"lfdr({x}) = {lfdr.evaluate(model, x):.3f}")

picked = lfdr.select(model, z, 0.1)
print(f"selected {len(picked)} of {len(z)}, false discovery proportion {null[picked].mean():.3f}")
