"""BEV pseudolabels from FV semantics, depth and poses."""

from .bev import BevMap, BevSpec, densify, merge, rasterize_dynamic, rasterize_static
from .cloud import Frame, FrameWindow, SemanticPointCloud, accumulate, filter_dynamic, lift_semantics
from .dbscan import ClusterSet, dbscan
from .ellipse import Ellipse, fit_ellipse_ransac
from .pipeline import PseudolabelConfig, generate_pseudolabel, valid_anchors, window_indices
