"""Weight-norm constraint operators and the soft-cap strength solver.

The operators all map a weight matrix to a weight matrix and act on its
singular values: plain decay scales the whole spectrum, rank-1 methods touch
only the top singular direction, the polynomial/msign family approximates
clipping maps on every singular value in parallel.

Norm conventions: ``ConstraintSpec.sigma_max`` (and ``sigma_min``) are stated
in ``norm_kind`` units and converted to spectral units internally, since the
singular-value maps live in spectral units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import NoSolutionError, RangeViolation, ZeroMatrixError
from .linalg import MSIGN_MAX_INFLATION, RMS_TO_RMS, SPECTRAL

NONE = "none"
WEIGHT_DECAY = "weight_decay"
SPECTRAL_WEIGHT_DECAY = "spectral_weight_decay"
SPECTRAL_NORMALIZE = "spectral_normalize"
STIEFEL_PROJECT = "stiefel_project"
SPECTRAL_HAMMER = "spectral_hammer"
SPECTRAL_SOFT_CAP = "spectral_soft_cap"
SPECTRAL_HARD_CAP = "spectral_hard_cap"
SPECTRAL_CLIP = "spectral_clip"
SPECTRAL_CLIPPED_WEIGHT_DECAY = "spectral_clipped_weight_decay"

METHODS = (
    NONE,
    WEIGHT_DECAY,
    SPECTRAL_WEIGHT_DECAY,
    SPECTRAL_NORMALIZE,
    STIEFEL_PROJECT,
    SPECTRAL_HAMMER,
    SPECTRAL_SOFT_CAP,
    SPECTRAL_HARD_CAP,
    SPECTRAL_CLIP,
    SPECTRAL_CLIPPED_WEIGHT_DECAY,
)

# Safety pad on the worst-case optimizer step norm used for coupling.
UPDATE_NORM_SAFETY = 1.05

# Below this top singular value a matrix is treated as zero (zero-initialized
# output projections hit this on step 0 by construction).
ZERO_SIGMA_TOL = 1e-12

# Power-iteration defaults inside the operators: run to convergence at desk
# scale. A small explicit iteration cap (pi_iters) reproduces the cheap
# few-iteration variant that can overshoot the target by ~10%.
_PI_MAX_ITERS = 100
_PI_TOL = 1e-8

# Fixed per-call-site power-iteration streams for reproducibility.
_SEED_WEIGHT_DECAY = 211
_SEED_NORMALIZE = 223
_SEED_HAMMER = 227
_SEED_SOFTCAP = 229


@dataclass(frozen=True)
class ConstraintSpec:
    """Which operator to apply, its target norm, strength, and conventions.

    ``mode`` only matters for spectral_normalize ("exact" rescales onto the
    target, "clip" only scales down). ``update_norm_premise`` selects the
    worst-case step norm used by the soft-cap coupling: "inflated" uses
    eta * MSIGN_MAX_INFLATION * 1.05, "plain" uses eta.
    """

    method: str = NONE
    sigma_max: float = 1.0
    sigma_min: float = 0.0
    lam: float = 0.0
    norm_kind: str = RMS_TO_RMS
    mode: str = "exact"
    update_norm_premise: str = "inflated"
    pi_iters: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown constraint method: {self.method!r}")
        if self.norm_kind not in linalg.NORM_KINDS:
            raise ValueError(f"unknown norm kind: {self.norm_kind!r}")
        if self.mode not in ("exact", "clip"):
            raise ValueError(f"unknown normalize mode: {self.mode!r}")
        if self.update_norm_premise not in ("inflated", "plain"):
            raise ValueError(f"unknown premise: {self.update_norm_premise!r}")
        if self.sigma_max < 0 or self.sigma_min < 0:
            raise ValueError("target norms must be nonnegative")
        if self.sigma_min > self.sigma_max:
            raise ValueError("sigma_min must not exceed sigma_max")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.method == SPECTRAL_CLIPPED_WEIGHT_DECAY and not 0.0 < self.lam <= 1.0:
            raise ValueError("clipped weight decay requires lam in (0, 1]")


@dataclass(frozen=True)
class CouplingInputs:
    """Inputs of the soft-cap strength solve.

    ``update_norm_bound`` is the worst-case norm of one optimizer step in the
    same units as ``sigma_max``. The decay factor couples through the actual
    learning rate ``eta``; the additive step uses ``update_norm_bound``.
    """

    sigma_max: float
    eta: float = 0.0
    lam: float = 0.0
    update_norm_bound: float = 0.0

    @property
    def k(self) -> float:
        """Worst-case top singular value after decay plus one step."""
        return self.sigma_max * (1.0 - self.lam * self.eta) + self.update_norm_bound


def muon_update_norm_bound(eta: float, premise: str = "inflated") -> float:
    """Worst-case norm of one orthogonalized step at learning rate eta."""
    if premise == "inflated":
        return eta * MSIGN_MAX_INFLATION * UPDATE_NORM_SAFETY
    if premise == "plain":
        return eta
    raise ValueError(f"unknown premise: {premise!r}")


def to_spectral(sigma: float, norm_kind: str, shape) -> float:
    """Convert a target norm from norm_kind units to spectral units."""
    if norm_kind == SPECTRAL:
        return sigma
    if norm_kind == RMS_TO_RMS:
        rows, cols = shape
        return sigma * math.sqrt(rows / cols)
    raise ValueError(f"unknown norm kind: {norm_kind!r}")


def _pi(w, spec_or_iters, seed):
    """Power iteration honoring an optional explicit iteration cap."""
    pi_iters = spec_or_iters.pi_iters if isinstance(spec_or_iters, ConstraintSpec) else spec_or_iters
    if pi_iters is None:
        return linalg.power_iterate(w, max_iters=_PI_MAX_ITERS, tol=_PI_TOL, seed=seed)
    return linalg.power_iterate(w, max_iters=pi_iters, tol=0.0, seed=seed)


def weight_decay(w, lam: float, eta: float) -> np.ndarray:
    """Scale every entry (hence every singular value) by (1 - lam * eta)."""
    w = linalg.as_matrix(w)
    shrink = 1.0 - lam * eta
    if not 0.0 <= shrink <= 1.0:
        raise ValueError("lam * eta must lie in [0, 1]")
    return w * shrink


def spectral_weight_decay(w, lam: float, pi_iters: int | None = None) -> np.ndarray:
    """Shrink only the top singular value: W - lam * sigma_1 u_1 v_1^T."""
    w = linalg.as_matrix(w)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    top = _pi(w, pi_iters, _SEED_WEIGHT_DECAY)
    if top.is_zero or top.sigma < ZERO_SIGMA_TOL:
        return w.copy()
    return w - lam * top.sigma * np.outer(top.u, top.v)


def spectral_normalize(w, spec: ConstraintSpec, mode: str | None = None) -> np.ndarray:
    """Rescale the whole spectrum so the top singular value meets the target.

    "exact" mode maps W to W * (target / sigma_1) so the norm lands exactly on
    the target; "clip" mode only ever scales down (W * min(1, target/sigma_1)).
    A numerically zero matrix is returned unchanged to avoid dividing by zero
    on zero-initialized layers.
    """
    out, _ = _spectral_normalize_impl(w, spec, mode)
    return out


def _spectral_normalize_impl(w, spec: ConstraintSpec, mode: str | None):
    w = linalg.as_matrix(w)
    mode = spec.mode if mode is None else mode
    if spec.sigma_max <= 0:
        raise ValueError("spectral_normalize needs sigma_max > 0")
    target = to_spectral(spec.sigma_max, spec.norm_kind, w.shape)
    top = _pi(w, spec, _SEED_NORMALIZE)
    if top.is_zero or top.sigma < ZERO_SIGMA_TOL:
        return w.copy(), True
    scale = target / top.sigma
    if mode == "clip":
        scale = min(1.0, scale)
    elif mode != "exact":
        raise ValueError(f"unknown normalize mode: {mode!r}")
    return w * scale, False


def stiefel_project(w, spec: ConstraintSpec,
                    msign_iters: int = linalg.DEFAULT_MSIGN_ITERS) -> np.ndarray:
    """Push all singular values to a common target: msign(W) rescaled."""
    w = linalg.as_matrix(w)
    target = to_spectral(spec.sigma_max, spec.norm_kind, w.shape)
    return linalg.msign(w, iters=msign_iters) * target


def spectral_hammer(w, spec: ConstraintSpec) -> np.ndarray:
    """Set the top singular value to the target via a rank-1 update.

    Only the principal direction is touched, so other singular values may
    exceed the target; this operator does not enforce a norm bound.
    """
    w = linalg.as_matrix(w)
    target = to_spectral(spec.sigma_max, spec.norm_kind, w.shape)
    top = _pi(w, spec, _SEED_HAMMER)
    if top.is_zero or top.sigma < ZERO_SIGMA_TOL:
        return w.copy()
    return w + (target - top.sigma) * np.outer(top.u, top.v)


def spectral_soft_cap(w, alpha: float, sigma_max: float,
                      norm_kind: str = SPECTRAL) -> np.ndarray:
    """Two-stage polynomial cap: x - a x^3 followed by y + a y^3.

    The polynomial pair lives on a normalized working scale where
    ``sigma_max`` maps to 1, so ``alpha`` means the same thing for every
    target norm. Singular values far below the target move by O(a sigma^3)
    only; at the target the composition contracts just enough to counteract a
    bounded optimizer step once ``alpha`` comes from the coupling solver.

    Raises RangeViolation if a singular value of the scaled input leaves the
    monotone range of the first stage (x <= 1/sqrt(3 a)); beyond it the
    composition is no longer order-preserving and silently "capping" there
    would wrap large values back down.
    """
    w = linalg.as_matrix(w)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if sigma_max <= 0:
        raise ValueError("sigma_max must be positive")
    if alpha == 0.0 or not w.any():
        return w.copy()
    target = to_spectral(sigma_max, norm_kind, w.shape)
    x = w / target
    top = _pi(x, None, _SEED_SOFTCAP)
    limit = 1.0 / math.sqrt(3.0 * alpha)
    if top.sigma > limit * (1.0 + 1e-9):
        raise RangeViolation(
            f"singular value {top.sigma * target:.6g} exceeds the monotone range "
            f"{limit * target:.6g} of the capping polynomial (alpha={alpha:.6g})")
    y = linalg.odd_poly_apply(x, [1.0, -alpha])
    y = linalg.odd_poly_apply(y, [1.0, alpha])
    return y * target


def softcap_residual(alpha: float, k: float, sigma_max: float) -> float:
    """f(alpha) = p2(p1(k)) - sigma_max for the capping pair at strength alpha.

    Expanding p2(p1(x)) with p1(x) = x - a x^3 and p2(y) = y + a y^3 at x = k
    gives the quartic -k^9 a^4 + 3 k^7 a^3 - 3 k^5 a^2 + k - sigma_max.
    """
    p = k - alpha * k**3
    return p + alpha * p**3 - sigma_max


def solve_softcap_alpha(inp: CouplingInputs,
                        f_tol: float = 1e-12, interval_tol: float = 1e-14) -> float:
    """Minimal alpha >= 0 such that one decayed step followed by the soft cap
    cannot push the norm above sigma_max.

    Solved by bisection on the residual rather than closed-form quartic roots;
    the bracket grows geometrically from 1e-6 but never beyond the monotone
    limit 1/(3 k^2), where the first-stage polynomial stops being order
    preserving at k. Returns 0 exactly when the decayed step already cannot
    exceed the target (k <= sigma_max).
    """
    if inp.sigma_max <= 0:
        raise ValueError("sigma_max must be positive")
    if inp.eta < 0 or inp.lam < 0 or inp.update_norm_bound < 0:
        raise ValueError("eta, lam, update_norm_bound must be nonnegative")
    k = inp.k
    if k <= inp.sigma_max:
        return 0.0

    def f(a):
        return softcap_residual(a, k, inp.sigma_max)

    a_limit = 1.0 / (3.0 * k * k)
    if f(a_limit) > 0.0:
        raise NoSolutionError(
            f"no capping strength within the monotone bracket can hold "
            f"sigma_max={inp.sigma_max:.6g} against k={k:.6g}")
    hi = min(1e-6, a_limit)
    lo = 0.0
    while f(hi) > 0.0:
        lo = hi
        hi = min(2.0 * hi, a_limit)
    # f(0) > 0 >= f(hi) and f is strictly decreasing on (0, a_limit]
    for _ in range(200):
        if hi - lo <= interval_tol or abs(f(hi)) <= f_tol:
            break
        mid = 0.5 * (lo + hi)
        if f(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def spectral_hardcap(w, beta: float,
                     msign_iters: int = linalg.DEFAULT_MSIGN_ITERS) -> np.ndarray:
    """Map every singular value sigma to min(beta, sigma) without an SVD.

    Uses the two-msign closed form
        1/2 [beta msign(W) + W - msign(beta I - msign(W) W^T)(beta msign(W) - W)],
    which follows from clip(x) = (beta + x - (beta - x) sign(beta - x)) / 2
    acting on the singular values. Sign error near sigma ~ beta is harmless
    because its multiplier (beta msign(W) - W) vanishes there.
    """
    w = linalg.as_matrix(w)
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not w.any():
        return w.copy()  # cap of zero is zero
    s = linalg.msign(w, iters=msign_iters)
    gate = beta * np.eye(w.shape[0]) - s @ w.T
    if gate.any():
        q = linalg.msign(gate, iters=msign_iters)
    else:
        q = np.zeros_like(gate)  # all singular values sit exactly at beta
    return 0.5 * (beta * s + w - q @ (beta * s - w))


def spectral_clip(w, lo: float, hi: float,
                  msign_iters: int = linalg.DEFAULT_MSIGN_ITERS) -> np.ndarray:
    """Clip every singular value into [lo, hi] via the three-msign identity.

    Based on clip(x) = (lo + hi + |lo - x| - |hi - x|) / 2 acting on the
    singular values, with each absolute value realized as
    (c msign(W) - W) msign(c msign(W) - W)^T. No SVD is computed. Raising a
    zero matrix to a positive floor has no defined singular directions, so
    that case errors; exact zero singular values of a nonzero rank-deficient
    input stay at zero for the same reason.
    """
    w = linalg.as_matrix(w)
    if lo > hi:
        raise ValueError("need lo <= hi")
    if not w.any():
        if lo > 0:
            raise ZeroMatrixError("cannot raise the zero matrix to a positive floor")
        return w.copy()
    s = linalg.msign(w, iters=msign_iters)

    def absolute_term(c):
        d = c * s - w
        if not d.any():
            return np.zeros((w.shape[0], w.shape[0]))
        return d @ linalg.msign(d, iters=msign_iters).T

    mid = 0.5 * (lo + hi) * np.eye(w.shape[0])
    return (mid + 0.5 * (absolute_term(lo) - absolute_term(hi))) @ s


def spectral_clipped_weight_decay(w, lam: float, beta: float,
                                  msign_iters: int = linalg.DEFAULT_MSIGN_ITERS) -> np.ndarray:
    """Decay only the singular values above beta: (1-lam) W + lam hardcap(W).

    Values at or below beta are fixed points ((1-lam) sigma + lam sigma);
    values above move toward (1-lam) sigma + lam beta. Under steps of norm at
    most eta the iteration equilibrates at beta + (1-lam)/lam * eta.
    """
    w = linalg.as_matrix(w)
    if not 0.0 < lam <= 1.0:
        raise ValueError("clipped weight decay requires lam in (0, 1]")
    return (1.0 - lam) * w + lam * spectral_hardcap(w, beta, msign_iters=msign_iters)


def apply_constraint(w, spec: ConstraintSpec, eta: float = 0.0) -> np.ndarray:
    """Dispatch to the operator named by ``spec`` (see apply_constraint_verbose)."""
    out, _ = apply_constraint_verbose(w, spec, eta)
    return out


def apply_constraint_verbose(w, spec: ConstraintSpec, eta: float = 0.0):
    """Apply the configured operator; returns (matrix, report).

    Target norms are converted from ``spec.norm_kind`` units to spectral units
    before delegating. For the soft cap, the strength is re-solved from
    (sigma_max, eta, lam, update premise) on every call so learning-rate
    schedules stay coupled, and a plain decay pre-step (1 - lam eta) runs
    first whenever lam > 0; the report records both.
    """
    w = linalg.as_matrix(w)
    report = {
        "method": spec.method,
        "alpha_used": None,
        "weight_decay_applied": False,
        "zero_matrix": False,
    }
    method = spec.method
    if method == NONE:
        return w.copy(), report
    if method == WEIGHT_DECAY:
        return weight_decay(w, spec.lam, eta), report
    if method == SPECTRAL_WEIGHT_DECAY:
        return spectral_weight_decay(w, spec.lam, pi_iters=spec.pi_iters), report
    if method == SPECTRAL_NORMALIZE:
        out, was_zero = _spectral_normalize_impl(w, spec, None)
        report["zero_matrix"] = was_zero
        return out, report
    if method == STIEFEL_PROJECT:
        return stiefel_project(w, spec), report
    if method == SPECTRAL_HAMMER:
        return spectral_hammer(w, spec), report
    if method == SPECTRAL_SOFT_CAP:
        if spec.lam > 0.0 and eta > 0.0:
            w = weight_decay(w, spec.lam, eta)
            report["weight_decay_applied"] = True
        bound = muon_update_norm_bound(eta, spec.update_norm_premise)
        alpha = solve_softcap_alpha(CouplingInputs(
            sigma_max=spec.sigma_max, eta=eta, lam=spec.lam, update_norm_bound=bound))
        report["alpha_used"] = alpha
        # the solver works in norm_kind units at raw scale; rescale onto the
        # normalized working scale of the polynomial pair
        alpha_scaled = alpha * spec.sigma_max ** 2
        return spectral_soft_cap(w, alpha_scaled, spec.sigma_max, spec.norm_kind), report
    if method == SPECTRAL_HARD_CAP:
        beta = to_spectral(spec.sigma_max, spec.norm_kind, w.shape)
        return spectral_hardcap(w, beta), report
    if method == SPECTRAL_CLIP:
        lo = to_spectral(spec.sigma_min, spec.norm_kind, w.shape)
        hi = to_spectral(spec.sigma_max, spec.norm_kind, w.shape)
        return spectral_clip(w, lo, hi), report
    if method == SPECTRAL_CLIPPED_WEIGHT_DECAY:
        beta = to_spectral(spec.sigma_max, spec.norm_kind, w.shape)
        return spectral_clipped_weight_decay(w, spec.lam, beta), report
    raise ValueError(f"unknown constraint method: {method!r}")
