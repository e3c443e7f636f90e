"""Adversarial robustness of a norm-capped classifier vs a loose baseline.

Trains two cluster classifiers to (near) identical clean accuracy -- one
constrained via the soft cap under orthogonalized momentum, one plain AdamW
with mild decay -- and probes both with an L2 projected-gradient attack at
growing budgets. The low-certificate model keeps its accuracy longer.

Run with: python demos/robustness.py
"""

from speclip import attack, constraints as con, training

SEED = 0
EPSILONS = [0.0, 0.5, 1.0, 2.0, 3.0]

capped = training.train(training.TrainConfig(
    task="clusters", optimizer="muon", method=con.SPECTRAL_SOFT_CAP,
    sigma_max=1.5, lr=0.2, steps=300, seed=SEED))
loose = training.train(training.TrainConfig(
    task="clusters", optimizer="adamw", method=con.WEIGHT_DECAY,
    lam=0.01, lr=0.02, steps=300, seed=SEED))

task = capped.config.make_task()
x, y = task.eval_set(SEED, 256)

print(f"clean accuracy: capped {capped.summary['final_accuracy']:.3f} "
      f"(certificate 10^{capped.summary['certificate_log10']:.2f}), "
      f"loose {loose.summary['final_accuracy']:.3f} "
      f"(certificate 10^{loose.summary['certificate_log10']:.2f})")
print()
print("accuracy / mean correct-class probability under L2 attack:")
print(f"{'eps':>5s} {'capped acc':>11s} {'loose acc':>10s} "
      f"{'capped p':>9s} {'loose p':>8s}")
rows_c = attack.robustness_curve(capped.model_spec, capped.params, x, y,
                                 EPSILONS, seed=SEED)
rows_l = attack.robustness_curve(loose.model_spec, loose.params, x, y,
                                 EPSILONS, seed=SEED)
for rc, rl in zip(rows_c, rows_l):
    print(f"{rc['epsilon']:5.1f} {rc['accuracy']:11.3f} {rl['accuracy']:10.3f} "
          f"{rc['mean_correct_prob']:9.3f} {rl['mean_correct_prob']:8.3f}")

print()
print("the loose model starts more confident but collapses sooner; the")
print("capped model's probabilities degrade smoothly with the budget.")
