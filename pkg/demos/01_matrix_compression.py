"""Single-matrix compression: factorization, pruning, and the hybrid.

Walks one weight matrix through the three compression schemes and
prints the storage and error numbers behind each.
"""

import numpy as np

from slimformer import (DenseMatrix, apply_mask, compress_layer,
                        effective_weight, factor_ratio, factorize_layer,
                        hybrid_ratio, magnitude_mask, rank_for_ratio,
                        reconstruct, svd, truncate, truncation_error)
from slimformer.tensor import frobenius_norm

rng = np.random.default_rng(0)
w = DenseMatrix(rng.normal(size=(64, 48)))

# Full decomposition first. The reconstruction should be exact to
# rounding, and the singular values come back sorted.
res = svd(w)
recon_err = np.max(np.abs(res.reconstruct().array - w.array))
print(f"matrix 64x48, full svd reconstruction error {recon_err:.2e}")
print(f"singular values head {np.round(res.singular_values[:4], 3)}")

# Rank from a storage budget. A rank-r pair stores r*(m+n) numbers, so
# half the storage of a 768x768 matrix means rank 192.
print(f"\nrank for 768x768 at half storage: "
      f"{rank_for_ratio(768, 768, 0.5)}")
print(f"storage fraction of that pair: {factor_ratio(768, 768, 192)}")

r = rank_for_ratio(64, 48, 0.3)
pair = factorize_layer(w, 0.3)
low = reconstruct(pair)
direct = frobenius_norm(DenseMatrix(w.array - low.array))
print(f"\nrank {r} keeps {factor_ratio(64, 48, r):.4f} of storage")
print(f"truncation error (from discarded spectrum) "
      f"{truncation_error(res, r):.6f}")
print(f"truncation error (direct)                  {direct:.6f}")

# Eckart-Young in action: no random pair of the same rank does better.
challengers = []
for _ in range(200):
    a = rng.normal(size=(64, r))
    b = rng.normal(size=(48, r))
    challengers.append(frobenius_norm(DenseMatrix(w.array - a @ b.T)))
print(f"best of 200 random rank-{r} pairs {min(challengers):.4f}, "
      f"svd {direct:.4f}")

# Magnitude pruning keeps the largest entries; survivors are exact.
mask = magnitude_mask(w, 0.3)
pruned = apply_mask(w, mask)
kept = int(mask.ones_count)
print(f"\npruning at 0.3 keeps {kept} of {64 * 48} entries")
print(f"pruned matrix error {frobenius_norm(DenseMatrix(w.array - pruned.array)):.4f}")

# The hybrid prunes the factors themselves. Storage multiplies:
# p_svd * p_weight, the worked value from the ratio table.
print(f"\nhybrid ratio at rank 192, pruning to 1/1.56: "
      f"{hybrid_ratio(768, 768, 192, 1 / 1.56):.4f}")
layer = compress_layer(w, 0.4, 0.5)
dense = effective_weight(layer)
print(f"hybrid at (0.4, 0.5): {layer.retained_count} stored numbers, "
      f"{layer.retained_count / (64 * 48):.4f} of dense")
print(f"hybrid error {frobenius_norm(DenseMatrix(w.array - dense.array)):.4f}")
