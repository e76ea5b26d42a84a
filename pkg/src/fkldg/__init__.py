"""Entropy-variable BDF-LDG solver for the Fisher-Kolmogorov equation on polygonal meshes."""

from .polymesh import PolyMesh, generate_voronoi
from .dgspace import DgSpace, build_space
from .ldg import CoeffField, LdgSystem, assemble
from .entropy import NonlinearOps
from .bdf import bdf_coefficients
from .newton import NewtonConfig, NewtonDriver

__version__ = "0.1.0"
