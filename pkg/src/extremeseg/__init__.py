"""Weakly supervised 3D segmentation from six extreme clicks.

Geodesic supervision between extreme points, a CRF-style regularised loss,
and the tooling (phantoms, metrics, file formats, CLI) to run it end to end.
"""

from .annotations import ExtremePointSet, VoxelBox
from .volume import Volume

__version__ = "0.1.0"
__all__ = ["ExtremePointSet", "Volume", "VoxelBox", "__version__"]
