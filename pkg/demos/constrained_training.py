"""Training with a per-step constraint pass, next to the unconstrained run.

The capped run keeps every weight norm at or under its target on every step
while the loss drops; the same no-normalization architecture without any
constraint at ten times the learning rate is free to blow up (at desk scale
it usually survives with a grotesque loss instead of hitting NaN -- bounded
orthogonalized steps cannot overflow float64 this quickly).

Run with: python demos/constrained_training.py
"""

from speclip import constraints as con
from speclip import training
from speclip.errors import DivergenceDetected

cfg = training.TrainConfig(task="clusters", optimizer="muon",
                           method=con.SPECTRAL_SOFT_CAP, sigma_max=2.0,
                           lr=0.2, steps=200, seed=0)
result = training.train(cfg)

print("capped run (soft cap, target RMS->RMS norm 2, embed held at 1):")
for record in result.logs[:: len(result.logs) // 8]:
    loss = "   --" if record["loss"] is None else f"{record['loss']:.4f}"
    print(f"  step {record['step']:3d}  loss={loss}"
          f"  max norm={max(record['norms'].values()):.4f}"
          f"  cert log10={record['certificate_log10']:.3f}")
print(f"  summary: {result.summary}")

print()
print("same transformer architecture, no constraints, 10x learning rate:")
probe = training.TrainConfig(task="charlm", optimizer="muon", method=con.NONE,
                             lr=2.0, steps=200, seed=0, batch_size=16,
                             width=32, depth=2, seq_len=16)
try:
    wild = training.train(probe)
    print(f"  survived: eval loss {wild.summary['eval_loss']:.1f}, "
          f"certificate log10 {wild.summary['certificate_log10']:.1f}, "
          f"max activation entry {wild.summary['max_activation_entry']:.3g}")
except DivergenceDetected as exc:
    print(f"  diverged: {exc}")

print()
print("the constrained model's max activation entry stays small"
      f" ({result.summary['max_activation_entry']:.3g}), one of the practical"
      " payoffs of capped norms.")
