"""The large-margin Gaussian mixture loss on a toy 2-D problem.

Run: python3 demos/loss_walkthrough.py
"""
import numpy as np

from lgmsv.lgm_loss import (Batch, GMParams, LossConfig, classification_loss, lgm_loss,
                            margin_classification_check, posterior)

# %% two classes with unit variance, one sample sitting a little closer to class 0
gm = GMParams(means=np.array([[-1.0, 0.0], [1.0, 0.0]]), log_variances=np.zeros((2, 2)))
x = np.array([-0.3, 0.2])
print("posterior", posterior(x, gm))

# %% the margin scales with the sample's own distance, so the loss grows with alpha
batch = Batch(x[None, :], np.array([0]))
for alpha in (0.0, 0.1, 0.3, 1.0):
    cls = classification_loss(batch, gm, LossConfig(alpha=alpha))
    ok = margin_classification_check(x, 0, gm, alpha * 0.5 * np.sum((x - gm.means[0]) ** 2))
    print(f"alpha={alpha:<4} cls={cls:.4f} margin satisfied={ok}")

# %% total = cls + lambda * lkd
total, cls, lkd = lgm_loss(batch, gm, LossConfig(alpha=1.0, lam=0.1))
print(f"total {total:.4f} = {cls:.4f} + 0.1 * {lkd:.4f}")
