"""Tour of the weight-constraint operators.

Builds one matrix with a spread-out spectrum and shows what each operator
does to its singular values. Run with: python demos/capping_operators.py
"""

import numpy as np

from speclip import constraints as con
from speclip import linalg

rng = np.random.default_rng(0)

# a 6x6 matrix with singular values 0.25 .. 3.0
u = linalg.svd_oracle(rng.standard_normal((6, 6)))[0]
v = linalg.svd_oracle(rng.standard_normal((6, 6)))[0]
sigmas = np.array([3.0, 2.0, 1.5, 1.0, 0.5, 0.25])
w = u @ np.diag(sigmas) @ v.T

def show(name, out):
    s = linalg.svd_oracle(out)[1]
    print(f"{name:28s} {np.round(s, 3)}")

print("singular values before:     ", sigmas)
print()

show("weight decay (lam*eta=0.2)", con.weight_decay(w, lam=2.0, eta=0.1))
show("spectral weight decay 0.5", con.spectral_weight_decay(w, lam=0.5))

spec = con.ConstraintSpec(method=con.SPECTRAL_NORMALIZE, sigma_max=1.0,
                          norm_kind=linalg.SPECTRAL)
show("spectral normalize -> 1", con.spectral_normalize(w, spec))

spec = con.ConstraintSpec(method=con.STIEFEL_PROJECT, sigma_max=1.0,
                          norm_kind=linalg.SPECTRAL)
show("stiefel projection", con.stiefel_project(w, spec))

spec = con.ConstraintSpec(method=con.SPECTRAL_HAMMER, sigma_max=1.0,
                          norm_kind=linalg.SPECTRAL)
show("spectral hammer -> 1", con.spectral_hammer(w, spec))

show("soft cap (alpha=0.15)", con.spectral_soft_cap(w / 3, 0.15, 1.0) * 3)
show("hard cap at 1", con.spectral_hardcap(w, 1.0))
show("clip to [0.5, 2.0]", con.spectral_clip(w, 0.5, 2.0))
show("clipped decay (lam=.5, b=1)", con.spectral_clipped_weight_decay(w, 0.5, 1.0))

print()
print("notes: the hammer moved only the top value (no bound on the rest);")
print("normalization scaled the whole spectrum; the caps and clip moved only")
print("values outside their band, up to the msign approximation tolerance.")
