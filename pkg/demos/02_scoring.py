"""EER and minDCF on a toy trial list, next to a brute-force threshold sweep.

Run: python demos/02_scoring.py
"""

import numpy as np

from mrrawnet.evaluator import eer, error_rates, min_dcf

rng = np.random.default_rng(3)
labels = np.r_[np.ones(20, bool), np.zeros(80, bool)]
scores = np.r_[rng.normal(1.0, 0.5, 20), rng.normal(0.0, 0.5, 80)]

value, threshold = eer(scores, labels)
print(f"EER {100 * value:.2f}% at threshold {threshold:.3f}")
print(f"minDCF (P_target 0.05) {min_dcf(scores, labels):.4f}")

# the same curve by hand: accept when score >= t
thresholds, p_miss, p_fa = error_rates(scores, labels)
gap = np.abs(p_miss - p_fa)
i = int(gap.argmin())
print(f"closest grid point: t={thresholds[i]:.3f} miss={p_miss[i]:.3f} false-accept={p_fa[i]:.3f}")

# scores only matter through their order
print("EER after exp():", f"{100 * eer(np.exp(scores), labels)[0]:.2f}%")
