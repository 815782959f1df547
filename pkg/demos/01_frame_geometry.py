"""Why four extractors with different kernels still agree on one frame rate.

Each extractor doubles the filterbank kernel of the previous one and halves
the kernel of its last convolution, so (filterbank stride x last stride)
stays fixed. Run: python demos/01_frame_geometry.py
"""

import numpy as np

from mrrawnet.engine.autograd import Tensor
from mrrawnet.frontend import MRFE, MRFEConfig, derive_geometry

geometry = derive_geometry(base_kernel=50, base_last_kernel=16, n_extractors=4)
print("extractor  fbank kernel  fbank stride  last kernel  last stride  frame stride")
for g in geometry:
    print(f"{g.index:>9}  {g.kernel:>12}  {g.fbank_stride:>12}  {g.last_kernel:>11}  "
          f"{g.last_stride:>11}  {g.frame_stride:>12}")

# channel widths do not affect frame counts, so a narrow front-end is enough to show it
mrfe = MRFE(MRFEConfig(fbank_filters=4, tcn_channels=2, tcn_hidden=2, blocks_per_repeat=1, repeats=1),
            rng=np.random.default_rng(0))
for seconds in (1, 2, 3):
    x = Tensor(np.random.default_rng(1).normal(size=(1, 1, 16000 * seconds)))
    frames = [fe(x)[0].shape[2] for fe in mrfe.extractors]
    print(f"{seconds} s of audio -> frames per extractor {frames}")
