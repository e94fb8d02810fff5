"""Full-sum training machinery for CTC and HMM label topologies."""

__version__ = "0.1.0"
