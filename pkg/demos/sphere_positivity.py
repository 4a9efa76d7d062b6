"""The empirical objective grows on small spheres around the reference.

Signals come from an orthonormal dictionary with two active atoms. For each
radius a handful of dictionaries is sampled on the sphere, and the average
Lasso objective is compared with its value at the reference. The smallest
difference is positive, and it scales roughly like r^2 as the expected
difference predicts.
"""

import numpy as np

from dictident import CoefficientModel, SignedUniform, generate_batch, orthonormal, sample_sphere
from dictident.experiments import scan_sphere
from dictident.phi import expected_delta_phi, uniform_lower_bound

D0 = orthonormal(32)
model = CoefficientModel(32, 2, SignedUniform(1.0, 2.0))
lam_bar = 0.05
lam = model.lam_from_bar(lam_bar)
batch = generate_batch(D0, model, 20_000, rng=0)
rng = np.random.default_rng(1)

print(" r      min dF      mean E[dphi]   uniform bound")
for r in (0.02, 0.05, 0.1):
    dirs = [sample_sphere(D0, r, rng) for _ in range(10)]
    scan = scan_sphere(batch, D0, dirs, lam)
    expect = np.mean([expected_delta_phi(D, D0, model, lam) for D in dirs])
    bound = uniform_lower_bound(D0, model, lam_bar, r).bound
    print(f"{r:5.2f}  {scan.min:10.3e}  {expect:12.3e}  {bound:12.3e}")
