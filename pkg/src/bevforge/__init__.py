"""Joint FV/BEV voxel representation, self-supervised losses and BEV pseudolabels."""

__version__ = "0.1.0"
