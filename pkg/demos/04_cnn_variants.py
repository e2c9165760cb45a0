"""
CNN variants on handwritten digits
==================================

Train the Gaussian- and Gabor-initialized CNNs with and without dropout on
the MNIST subset bundled with mlxtend (500 images per class).

Usage: ``python demos/04_cnn_variants.py [train_per_class] [epochs]``. The
defaults (100 per class, 5 epochs) finish in a few minutes; 400 and 30
match the acceptance run.
"""
import sys
import time

from _digits import load_digits
from hbdr.dataio import stratified_split
from hbdr.training import NetworkConfig, build_network, train

per_class = int(sys.argv[1]) if len(sys.argv) > 1 else 100
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 5

ds = stratified_split(load_digits(), per_class, seed=1, per_class_test=100)
print(f"{len(ds.train_idx)} training / {len(ds.test_idx)} test images")

# %%
# Same seed everywhere: the split, the shuffling order and the C2/F1/F2
# initial weights match across variants, only C1 and dropout differ.
results = {}
for variant in ("cnn-gaussian", "cnn-gabor", "cnn-gaussian-dropout", "cnn-gabor-dropout"):
    cfg = NetworkConfig(variant=variant, epochs=epochs)
    t0 = time.perf_counter()
    rep = train(build_network(cfg), ds, cfg)
    results[variant] = rep
    curve = " ".join(f"{a:.3f}" for a in rep.test_accuracy)
    print(f"{variant:<22} {rep.final_accuracy:.4f}  ({time.perf_counter() - t0:.0f}s)  {curve}")

# %%
# Which digits get confused with which, for the last variant.
rep = results["cnn-gabor-dropout"]
print(rep.confusion)
