"""High-order VEF radiation transport: DG sweeps coupled to DG and CG drift-diffusion solves."""

__version__ = "0.1.0"
