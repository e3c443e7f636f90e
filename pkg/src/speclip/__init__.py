"""Spectral weight-norm constraints and Lipschitz certificates, desk scale.

The library has three layers:

* ``linalg`` -- power iteration, the polynomial msign orthogonalizer, odd
  polynomial spectral maps, and an SVD oracle used only for testing.
* ``constraints`` -- the weight-constraint operators (decay variants,
  normalization, Stiefel projection, hammer, soft/hard caps, clipping) and
  the solver that couples the soft-cap strength to the learning rate so a
  bounded optimizer step provably cannot push the norm past its target.
* ``certificate`` / ``models`` / ``optim`` / ``training`` / ``attack`` -- a
  toy training stack (manual backprop, orthogonalized-momentum and AdamW
  optimizers, per-step constraint pass), activation-norm and Lipschitz bound
  propagation, and L2 adversarial probing.

``speclip.selftest.run_selftest()`` (or ``speclip selftest`` on the command
line) exercises all of the library's guarantees end to end on small matrices
and toy training runs.
"""

from .certificate import (ArchitectureSpec, BlockNorms, GELU_MAX_SLOPE,
                          LipschitzCertificate, attention_lipschitz, certify,
                          empirical_lipschitz_lower_bound,
                          propagate_activation_bounds)
from .constraints import (ConstraintSpec, CouplingInputs, apply_constraint,
                          apply_constraint_verbose, muon_update_norm_bound,
                          solve_softcap_alpha, softcap_residual,
                          spectral_clip, spectral_clipped_weight_decay,
                          spectral_hammer, spectral_hardcap,
                          spectral_normalize, spectral_soft_cap,
                          spectral_weight_decay, stiefel_project, weight_decay)
from .errors import (ConvergenceFailure, CorruptCheckpoint,
                     DivergenceDetected, NoSolutionError, RangeViolation,
                     ShapeMismatch, SpeclipError, VersionMismatch,
                     VocabOverflow, ZeroMatrixError)
from .linalg import (DEFAULT_MSIGN_ITERS, MSIGN_MAX_INFLATION, RMS_TO_RMS,
                     SPECTRAL, SingularTriple, matrix_norm, msign,
                     odd_poly_apply, power_iterate, svd_oracle)
from .models import ModelSpec, init_params
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "BlockNorms", "GELU_MAX_SLOPE", "LipschitzCertificate",
    "attention_lipschitz", "certify", "empirical_lipschitz_lower_bound",
    "propagate_activation_bounds",
    "ConstraintSpec", "CouplingInputs", "apply_constraint",
    "apply_constraint_verbose", "muon_update_norm_bound", "solve_softcap_alpha",
    "softcap_residual", "spectral_clip", "spectral_clipped_weight_decay",
    "spectral_hammer", "spectral_hardcap", "spectral_normalize",
    "spectral_soft_cap", "spectral_weight_decay", "stiefel_project",
    "weight_decay",
    "ConvergenceFailure", "CorruptCheckpoint", "DivergenceDetected",
    "NoSolutionError", "RangeViolation", "ShapeMismatch", "SpeclipError",
    "VersionMismatch", "VocabOverflow", "ZeroMatrixError",
    "DEFAULT_MSIGN_ITERS", "MSIGN_MAX_INFLATION", "RMS_TO_RMS", "SPECTRAL",
    "SingularTriple", "matrix_norm", "msign", "odd_poly_apply",
    "power_iterate", "svd_oracle",
    "ModelSpec", "init_params", "TrainConfig", "TrainResult", "train",
]
