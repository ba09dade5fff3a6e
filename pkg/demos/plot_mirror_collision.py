"""
What the descriptor cannot see
==============================

Unsigned angles cannot tell a neighbourhood from its mirror image. The
Procrustes check says the two are not congruent under a proper rotation, yet
their descriptors agree.
"""

import numpy as np

from risurconv.risp import Congruence, congruence_oracle, is_mirror_image, risp
from risurconv.sampling import Neighborhood

rng = np.random.default_rng(3)
p = np.zeros(3)
x = rng.normal(size=(8, 3))
x = x[np.argsort(np.linalg.norm(x, axis=1))]
n = rng.normal(size=(9, 3))
n /= np.linalg.norm(n, axis=1, keepdims=True)
a = Neighborhood.from_arrays(p, x, n[0], n[1:])

flip = np.diag([1.0, 1.0, -1.0])
b = Neighborhood(a.reference_index, a.neighbor_indices, a.points @ flip, a.normals @ flip)

print("congruent:", congruence_oracle(a, b) is Congruence.CONGRUENT)
print("mirror image:", is_mirror_image(a, b))
print("max |delta descriptor|:", np.max(np.abs(risp(a).values - risp(b).values)))

###############################################################################
# Nudging one neighbour by a millimetre-scale step is enough to separate
# the descriptors, so the collision above is specific to reflections.

pts = a.points.copy()
pts[3] += 1e-3
c = Neighborhood(a.reference_index, a.neighbor_indices, pts, a.normals)
print("nudged, max |delta descriptor|:", np.max(np.abs(risp(a).values - risp(c).values)))
