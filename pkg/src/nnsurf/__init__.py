"""Surface reconstruction from unstructured point clouds.

Points are embedded in the plane with Isomap, a small feed-forward network
learns the map back to 3D, a spline loop fitted to sampled boundary rings
bounds a resampled planar grid, and the trimmed Delaunay mesh of that grid
is lifted through the network.
"""

from .embedding import isomap
from .neuralnet import Network, TrainConfig, adaptive_search, finalize, forward
from .pipeline import PipelineConfig, benchmark, load_config, run

__all__ = ["isomap", "Network", "TrainConfig", "adaptive_search", "finalize", "forward",
           "PipelineConfig", "benchmark", "load_config", "run"]
__version__ = "0.1.0"
