"""Darcy's law with memory from periodic slip-boundary cell problems."""
from .config import RunConfig, load_config
from .errors import MemDarcyError
from .geometry import CellMesh, HoleSpec, build_cell_mesh
from .kernels import KernelTable, compute_kernels, load_kernels, save_kernels

__all__ = [
    "CellMesh",
    "HoleSpec",
    "KernelTable",
    "MemDarcyError",
    "RunConfig",
    "build_cell_mesh",
    "compute_kernels",
    "load_config",
    "load_kernels",
    "save_kernels",
]
__version__ = "0.1.0"
