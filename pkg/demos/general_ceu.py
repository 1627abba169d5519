"""General CE-U: one knob between learning and unlearning.

The target puts a preference score on the true label.  In raw form the
score replaces the true-label logit (+inf gives the one-hot, -inf gives
CE-U); in normalized form it is a mixing weight between the two.  Both
describe the same family, linked by r = sigmoid(r_raw - logsumexp(others)).
"""

import numpy as np

from ceulab.autodiff import Tensor
from ceulab.losses import (
    PreferenceScore,
    ceu_loss,
    cross_entropy_loss,
    general_ceu_loss,
    general_ceu_target_normalized,
    general_ceu_target_raw,
    raw_to_normalized,
)

z = np.array([1.0, 2.0, 3.0])
y = 2
np.set_printoptions(precision=6, suppress=True)

for r_raw in [-np.inf, -2.0, 0.0, 2.0, np.inf]:
    r = raw_to_normalized(z, y, r_raw)
    raw = general_ceu_target_raw(z, y, [r_raw])[0]
    norm = general_ceu_target_normalized(z, y, [r])[0]
    print(f"r_raw={r_raw:>5}  r={r:.6f}  raw target {raw}  max diff {np.abs(raw - norm).max():.1e}")

# the loss sweeps from CE-U (r=0) to ordinary cross entropy (r=1)
logits = Tensor(z[None, :])
labels = np.array([y])
for r in np.linspace(0, 1, 5):
    loss = general_ceu_loss(logits, labels, PreferenceScore.normalized([r])).item()
    print(f"r={r:.2f}  loss={loss:.6f}")
print("CE-U:", ceu_loss(logits, labels).item(), " CE:", cross_entropy_loss(logits, labels).item())
