"""
First-layer filter banks
========================

The two ways C1 can be seeded: an oriented Gabor bank (8 orientations by 4
wavelengths) and i.i.d. Gaussian noise. Both are written as PGM mosaics.
"""
import sys
from pathlib import Path

import numpy as np

from hbdr.dataio import export_tiles
from hbdr.filters import GaborSpec, gabor_bank, gaussian_bank
from hbdr.tensor import make_rng

out = Path(sys.argv[1] if len(sys.argv) > 1 else "filter-banks")

gabor = gabor_bank(32, 5)
gauss = gaussian_bank(32, 5, 0.1, make_rng(1, "init"))

# %%
# Each Gabor filter is zero-mean with unit L2 norm. Row t of the mosaic holds
# angle t*pi/8, the columns run through wavelengths 2, 3, 4 and 5 pixels.
flat = gabor.reshape(32, -1)
print("gabor  mean range", np.ptp(flat.mean(axis=1)), "norms", np.unique(np.round(np.linalg.norm(flat, axis=1), 12)))
print("gauss  std", gauss.std().round(4))

export_tiles([k[0] for k in gabor], out / "gabor", "filter", columns=4)
export_tiles([k[0] for k in gauss], out / "gaussian", "filter", columns=4)
print("wrote", out / "gabor" / "filter_grid.pgm", "and", out / "gaussian" / "filter_grid.pgm")

# %%
# The layout is adjustable. A 9x9 bank with wider wavelengths:
wide = gabor_bank(24, spec=GaborSpec(size=9, orientations=6, wavelengths=(4.0, 6.0, 8.0, 10.0)))
print("custom bank", wide.shape)
