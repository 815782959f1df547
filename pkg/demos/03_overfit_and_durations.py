"""Train the micro model on synthetic speakers, then score held-out pairs at
several crop durations. Takes a couple of minutes on one core.

Run: python demos/03_overfit_and_durations.py [seed]
"""

import sys
import time

from mrrawnet.model import count_params
from mrrawnet.recipes import OVERFIT_BATCH, OVERFIT_STEPS, overfit_config, run_overfit

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = overfit_config(seed)
start = time.perf_counter()
outcome = run_overfit(cfg)
total, _ = count_params(outcome.model)

losses = [m["loss"] for m in outcome.train.metrics]
print(f"micro model, {total:,d} parameters; {OVERFIT_STEPS} steps of {OVERFIT_BATCH} crops "
      f"in {time.perf_counter() - start:.0f}s")
print(f"loss {losses[0]:.2f} -> {sum(losses[-20:]) / 20:.2f} (last 20 steps)")
print(f"training accuracy {outcome.train.train_accuracy:.3f}")
print()
print(outcome.report.to_table())
