"""frosthpo: multi-fidelity HPO with trainable-layer count as a fidelity."""

__version__ = "0.1.0"
