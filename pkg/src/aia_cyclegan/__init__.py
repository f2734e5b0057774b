"""Non-parallel speech enhancement with attention-in-attention cycle-consistent GANs."""

__version__ = "0.1.0"
