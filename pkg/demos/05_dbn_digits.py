"""
A deep belief network on digits
===============================

Greedy pretraining of a 1024-100-100 RBM stack, then supervised fine-tuning
with a softmax head. The first-layer weights are exported as 32x32 tiles.

Usage: ``python demos/05_dbn_digits.py [train_per_class] [pretrain_epochs] [epochs] [out_dir]``.
"""
import sys
from pathlib import Path

from _digits import load_digits
from hbdr.dataio import export_tiles, stratified_split
from hbdr.dbn import DbnConfig, DbnClassifier, finetune, greedy_pretrain
from hbdr.tensor import make_rng
from hbdr.training import evaluate

per_class = int(sys.argv[1]) if len(sys.argv) > 1 else 200
pretrain_epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 5
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 10
out = Path(sys.argv[4] if len(sys.argv) > 4 else "dbn-weights")

ds = stratified_split(load_digits(), per_class, seed=1, per_class_test=100)
cfg = DbnConfig(pretrain_epochs=pretrain_epochs, epochs=epochs)
train_x = ds.images[ds.train_idx]

# %%
# Pretraining only sees pixels, never labels.
stack = greedy_pretrain(train_x, cfg, make_rng(1, "gibbs"),
                        on_epoch=lambda layer, e, p: print(f"layer {layer + 1} epoch {e + 1}"))

# %%
# Before fine-tuning, a random softmax head on top of the stack is a weak
# classifier. Backpropagation through all layers fixes that.
untuned = DbnClassifier.from_stack(stack, 10, make_rng(1, "init"))
acc0, _ = evaluate(untuned, ds.images[ds.test_idx], ds.labels[ds.test_idx])
net, rep = finetune(stack, ds, cfg, make_rng(1, "init"))
print(f"test accuracy before fine-tuning {acc0:.4f}, after {rep.final_accuracy:.4f}")

# %%
# Layer-1 hidden units as images of their incoming weights.
export_tiles([w.reshape(32, 32) for w in stack[0].w.T], out, "unit")
print("weights written to", out / "unit_grid.pgm")
