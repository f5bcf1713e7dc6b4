"""Pointwise convolution via fixed conventional transforms.

A library and CLI that swaps learnable 1x1 convolutions for fixed
Walsh-Hadamard or cosine transforms, embeds them in a small trainable CNN
core, and statically accounts parameters and operation counts for the
ShuffleNet-V2 / MobileNet-V1 variants built on them.
"""

__version__ = "0.1.0"
