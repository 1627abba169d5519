"""How hard does each objective push on the true-label logit?

Gradient ascent pushes with 1 - p(y): strongly when the model is unsure
and hardly at all once it is confident, which is exactly when the fact is
memorized.  CE-U pushes with p(y), so the push grows with confidence.
The numbers below come from the closed forms and are checked against the
autodiff graph for one row.
"""

import numpy as np

from ceulab.autodiff import Tensor, backward
from ceulab.grad_analysis import (
    DpoGradSample,
    GrpoGradSample,
    dpo_weight,
    grpo_coefficient,
    grpo_sign_boundary,
    sweep_report,
)
from ceulab.losses import ceu_loss, grad_ascent_loss

sweep = sweep_report(11)
print(f"{'p(y)':>8} {'GA':>8} {'CE-U':>8}")
for p, ga, ceu in sweep.rows():
    print(f"{p:8.4f} {ga:8.4f} {ceu:8.4f}")

# same thing out of the graph: a 5-way row with p(y) = 0.99
y = 2
probs = np.full(5, 0.0025)
probs[y] = 0.99
for name, loss_fn in [("GA", grad_ascent_loss), ("CE-U", ceu_loss)]:
    z = Tensor(np.log(probs)[None, :])
    backward(loss_fn(z, np.array([y])))
    print(f"{name} true-label gradient at p(y)=0.99: {z.grad[0, y]:+.6f}")

# preference-optimization counterparts
print("DPO weight, beta=0.1, reward gap 0:", dpo_weight(DpoGradSample(beta=0.1, reward_gap=0.0)))
s = GrpoGradSample(advantage=-0.5, beta=0.04, prob_ratio=2.0)
print("GRPO coefficient:", grpo_coefficient(s))
print("GRPO sign flips at advantage", grpo_sign_boundary(beta=0.04, prob_ratio=2.0))
