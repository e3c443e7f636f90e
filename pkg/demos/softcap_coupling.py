"""Why the soft cap needs a solved strength, and what the solve buys you.

The two-stage polynomial pair (x - a x^3 then y + a y^3) barely moves small
singular values, but at the target it must contract exactly hard enough to
undo one worst-case optimizer step. Solving the quartic residual for the
minimal strength makes the target a fixed point of step-then-cap, so the norm
can never drift above it -- even as the learning rate is scheduled to zero.

Run with: python demos/softcap_coupling.py
"""

import numpy as np

from speclip import constraints as con
from speclip import linalg
from speclip.errors import NoSolutionError

sigma_max, lam = 1.0, 0.0

print("minimal strength vs learning rate (target norm 1):")
for eta in (0.01, 0.05, 0.1, 0.2, 0.25, 0.3):
    bound = con.muon_update_norm_bound(eta)
    inp = con.CouplingInputs(sigma_max, eta, lam, bound)
    try:
        alpha = con.solve_softcap_alpha(inp)
    except NoSolutionError:
        # one application of the pair can shrink k by at most ~23.5% before
        # the first stage stops being monotone at k, so a worst step this
        # large cannot be undone: pick a smaller eta or a larger target
        print(f"  eta={eta:5.2f}  worst step={bound:.4f}  k={inp.k:.4f}"
              f"  -> infeasible (k beyond the monotone bracket)")
        continue
    resid = con.softcap_residual(alpha, inp.k, sigma_max)
    print(f"  eta={eta:5.2f}  worst step={bound:.4f}  k={inp.k:.4f}"
          f"  alpha={alpha:.6f}  residual={resid:+.1e}")

print()
print("scalar worst case, 2000 iterations of step-then-cap at eta=0.2:")
eta = 0.2
bound = con.muon_update_norm_bound(eta)
alpha = con.solve_softcap_alpha(con.CouplingInputs(sigma_max, eta, lam, bound))
sigma, peak = 0.1, 0.0
for t in range(2000):
    stepped = sigma + bound            # adversarial: step fully aligned
    p1 = stepped - alpha * stepped**3
    sigma = p1 + alpha * p1**3
    peak = max(peak, sigma)
print(f"  final sigma={sigma:.12f}  peak={peak:.12f}  (never above 1)")

print()
print("matrix version, msign-normalized random updates on a 16x16 weight:")
rng = np.random.default_rng(0)
w = np.zeros((16, 16))
for t in range(200):
    eta_t = 0.2 * (1 - t / 200)        # linear schedule to zero
    bound = con.muon_update_norm_bound(eta_t)
    step = linalg.msign(rng.standard_normal((16, 16)))
    w = w + step * bound / linalg.svd_oracle(step)[1][0]
    alpha = con.solve_softcap_alpha(
        con.CouplingInputs(sigma_max, eta_t, lam, bound))
    w = con.spectral_soft_cap(w, alpha * sigma_max**2, sigma_max)
    if t % 40 == 0 or t == 199:
        print(f"  step {t:3d}  eta={eta_t:.3f}  alpha={alpha:.5f}  "
              f"norm={linalg.svd_oracle(w)[1][0]:.9f}")

print()
print("with a fixed strength instead, errors would accumulate once the")
print("schedule drops below the approximation gap; re-solving per step keeps")
print("the cap exactly as strong as the current step requires.")
