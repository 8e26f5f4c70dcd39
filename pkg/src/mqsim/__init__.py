"""Two-level mixed quantization and a cycle-level accelerator simulator for hybrid vision networks."""

__version__ = "0.1.0"
