"""
Checking the hand-written backward pass
=======================================
"""
import numpy as np

from syntagraph.encoder import EncoderConfig, gradient_check

config = EncoderConfig(num_layers=2, num_heads=2, model_dim=16, ffn_dim=32, dropout_rate=0.0)
worst, per_tensor = gradient_check(config, n_nodes=12, lambda_dc=0.01, coords=20)
for name, err in per_tensor.items():
    print(f"{name:22s} {err:.2e}")
print("max relative error", worst)

# a deliberately broken gradient is caught
bad, _ = gradient_check(config, n_nodes=12, coords=5, corrupt=True)
print("corrupted:", bad, "->", "caught" if bad > 1e-4 else "missed")
