"""
Decoder parameter budgets
=========================

The convolutional ODE decoder reuses one small kernel across every position of
its input vector, while the fully connected decoder needs a dense matrix per
layer. Counting weights at the default width of 128 makes the gap concrete.
"""

from npode.cli import decoder_shapes
from npode.decoders import count_parameters
from npode.model import ModelConfig

# One input and one output are enough: decoder weight shapes do not depend on them.
cfg = ModelConfig(1, 1)
print(f"decoder input length: {cfg.decoder_width}, ODE channels: {cfg.ode_channels}\n")

ode = count_parameters(decoder_shapes(cfg, "npode"))
mlp = count_parameters(decoder_shapes(cfg, "mlp"))
print(ode.to_text(), end="\n\n")
print(mlp.to_text(), end="\n\n")

# The ratio grows linearly with the width: doubling the width quadruples the
# dense layers but only doubles the convolution input length.
print(f"dense / convolutional: {mlp.total / ode.total:.2f}x")
