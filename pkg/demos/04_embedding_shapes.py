"""Follow one utterance through the default model and print every stage.

The embedding size does not depend on the input duration.
Run: python demos/04_embedding_shapes.py
"""

import numpy as np

from mrrawnet.model import ModelConfig, assemble, count_params, embed_waveforms

model = assemble(ModelConfig.default())
model.eval()
total, breakdown = count_params(model)
print(f"default model: {total:,d} parameters")
for name, n in breakdown.items():
    print(f"  {name:<10} {n:>12,d}")

for seconds in (1, 2):
    trace: dict = {}
    wav = np.random.default_rng(seconds).normal(scale=0.1, size=(1, 1, 16000 * seconds))
    embed_waveforms(model, wav, trace=trace)
    print(f"\n{seconds} s input")
    for key, shape in trace.items():
        print(f"  {key:<10} {shape}")
