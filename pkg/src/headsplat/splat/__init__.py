from .cloud import (GaussianSplat, SplatCloud, SplatError, concat, covariance, covariances,
                    quat_to_rotmat, rotmat_to_quat)
from .imageio import load_imgf, load_png, save_imgf, save_png
from .ply import PlyError, export_ply, import_ply
from .renderer import (RenderedImage, compositing_weights, contributors, project, render,
                       render_gradients,
                     render_torch, render_views)

__all__ = [
    "GaussianSplat", "SplatCloud", "SplatError", "concat", "covariance", "covariances",
    "quat_to_rotmat", "rotmat_to_quat", "load_imgf", "load_png", "save_imgf", "save_png",
    "PlyError", "export_ply", "import_ply", "RenderedImage", "compositing_weights", "project",
    "contributors", "render", "render_gradients", "render_torch", "render_views",
]
