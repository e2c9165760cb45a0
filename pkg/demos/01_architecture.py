"""
The CNN layer by layer
======================

Build the default network, push one blank 32x32 image through it and print
the feature-map size and trainable parameter count of every layer.
"""
import numpy as np

from hbdr.training import NetworkConfig, build_network, param_breakdown, param_count

net = build_network(NetworkConfig())

# %%
# Shapes come from an actual forward pass, not from the config arithmetic.
shapes = net.trace_shapes(np.zeros((1, 32, 32), np.float32))
counts = param_breakdown(net)

print(f"{'layer':<6}{'output':>14}{'parameters':>14}")
for (name, n), shape in zip(counts.items(), shapes):
    print(f"{name:<6}{'x'.join(map(str, shape)):>14}{n:>14,}")
print(f"{'total':<6}{'':>14}{param_count(net):>14,}")

# %%
# Convolution biases are stored per (output map, input map) connection, so
# C2 holds a 64x32 bias matrix next to its 64x32x5x5 kernels and F1 keeps one
# bias per unit and S2 map. Only the row sums act in the forward pass.
for name, arr in net.params().items():
    print(f"{name:<12} {arr.shape}")
