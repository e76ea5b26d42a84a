"""Built-in test problems.

* ``mms-linear-time``  manufactured solution, linear in time, D = I
* ``mms-exp-time``     manufactured solution, exponential decay in time, D = 1e-3 I
* ``wave``             Fisher-KPP traveling wave on (0,3) x (0,1)
* ``two-region``       grey/white matter stand-in with anisotropic white-matter diffusion

Functions of space take arrays ``x, y`` of any matching shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ldg import CoeffField
from .polymesh import PolyMesh

GREY, WHITE = 0, 1


@dataclass
class Scenario:
    name: str
    domain: tuple[float, float, float, float]
    T: float
    c0: Callable
    coeffs: Callable[[PolyMesh], CoeffField]
    exact: Callable | None = None
    exact_grad: Callable | None = None
    source: Callable | None = None
    label_mesh: Callable[[PolyMesh], PolyMesh] | None = None
    defaults: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def has_exact(self) -> bool:
        return self.exact is not None

    def check_initial(self, n: int = 201):
        x0, y0, x1, y1 = self.domain
        X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
        c = self.c0(X, Y)
        if np.any(c < 0) or np.any(c > 1):
            raise ValueError(f"initial condition of {self.name!r} leaves [0, 1]")
        if self.T <= 0:
            raise ValueError("final time must be positive")


# -- manufactured solutions ----------------------------------------------------


def _profile(x, y):
    return 0.25 * (np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y) + 2.0)


def _profile_grad(x, y):
    gx = -0.5 * np.pi * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    gy = -0.5 * np.pi * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)
    return gx, gy


def _profile_laplacian(x, y):
    return -2.0 * np.pi**2 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)


def manufactured(name: str, d: float, alpha: float, time_factor, time_factor_dt, T: float) -> Scenario:
    """Separable solution c = profile(x, y) * time_factor(t) with the matching source."""

    def exact(x, y, t):
        return _profile(x, y) * time_factor(t)

    def exact_grad(x, y, t):
        gx, gy = _profile_grad(x, y)
        return gx * time_factor(t), gy * time_factor(t)

    def source(x, y, t):
        c = exact(x, y, t)
        dc = _profile(x, y) * time_factor_dt(t)
        return dc - d * _profile_laplacian(x, y) * time_factor(t) - alpha * c * (1.0 - c)

    return Scenario(
        name=name,
        domain=(0.0, 0.0, 1.0, 1.0),
        T=T,
        c0=lambda x, y: exact(x, y, 0.0),
        coeffs=lambda mesh: CoeffField.constant(mesh, alpha, d),
        exact=exact,
        exact_grad=exact_grad,
        source=source,
        defaults={"theta": -1.0, "eta0": 1.0, "use_facet_count": False, "tol": 1e-16, "epsilon": 0.0},
        params={"d": d, "alpha": alpha},
    )


def mms_linear_time(T: float = 0.05, d: float = 1.0, alpha: float = 1.0) -> Scenario:
    return manufactured("mms-linear-time", d, alpha, lambda t: 1.0 - t, lambda t: -1.0 + 0.0 * t, T)


def mms_exp_time(T: float = 2.0, d: float = 1e-3, alpha: float = 1.0) -> Scenario:
    return manufactured("mms-exp-time", d, alpha, lambda t: np.exp(-t), lambda t: -np.exp(-t), T)


# -- traveling wave --------------------------------------------------------


def wave_speed(alpha: float, d_ext: float) -> float:
    return 5.0 * np.sqrt(alpha * d_ext / 6.0)


def wave_profile(xi, alpha: float = 1.0, d_ext: float = 1e-3):
    k = np.sqrt(alpha / (24.0 * d_ext))
    return 0.25 * (1.0 + np.tanh(8.0 - k * np.asarray(xi, dtype=float))) ** 2


def wave_profile_derivative(xi, alpha: float = 1.0, d_ext: float = 1e-3):
    k = np.sqrt(alpha / (24.0 * d_ext))
    z = 8.0 - k * np.asarray(xi, dtype=float)
    return -0.5 * k * (1.0 + np.tanh(z)) / np.cosh(z) ** 2


def wave(T: float = 10.0, alpha: float = 1.0, d_ext: float = 1e-3) -> Scenario:
    v = wave_speed(alpha, d_ext)

    def exact(x, y, t):
        return wave_profile(x - v * t, alpha, d_ext) + 0.0 * y

    def exact_grad(x, y, t):
        return wave_profile_derivative(x - v * t, alpha, d_ext) + 0.0 * y, 0.0 * x * y

    return Scenario(
        name="wave",
        domain=(0.0, 0.0, 3.0, 1.0),
        T=T,
        c0=lambda x, y: exact(x, y, 0.0),
        coeffs=lambda mesh: CoeffField.constant(mesh, alpha, d_ext),
        exact=exact,
        exact_grad=exact_grad,
        defaults={"theta": -1.0, "eta0": 1.0, "use_facet_count": False, "tol": 1e-10, "epsilon": 0.0},
        params={"alpha": alpha, "d_ext": d_ext, "speed": v},
    )


# -- two-region stand-in ----------------------------------------------------------


def two_region(
    seeding: str = "brainstem",
    T: float = 25.0,
    length: float = 100.0,
    height: float = 40.0,
    band: tuple[float, float] = (12.0, 28.0),
    alpha_grey: float = 0.45,
    alpha_white: float = 0.9,
    d_ext: float = 8.0,
    d_axn: float = 80.0,
    seed_amplitude: float = 0.5,
    seed_radius: float = 4.0,
    far_region_x: float = 75.0,
) -> Scenario:
    """Rectangle (mm) with a horizontal white-matter band between grey layers.

    ``brainstem`` seeds misfolded protein in a grey corner far from the
    right end; ``limbic`` seeds it next to the white-matter band near the
    middle. The far region is the grey matter right of ``far_region_x``.
    """
    seeds = {"brainstem": (6.0, 6.0), "limbic": (0.4 * length, band[1] + 0.5 * seed_radius)}
    if seeding not in seeds:
        raise ValueError(f"unknown seeding {seeding!r}; choose from {sorted(seeds)}")
    sx, sy = seeds[seeding]

    def c0(x, y):
        return seed_amplitude * np.exp(-((x - sx) ** 2 + (y - sy) ** 2) / seed_radius**2)

    def label_mesh(mesh: PolyMesh) -> PolyMesh:
        cy = mesh.cell_centroids[:, 1]
        labels = np.where((cy > band[0]) & (cy < band[1]), WHITE, GREY)
        return mesh.with_labels(labels, np.tile([1.0, 0.0], (mesh.n_cells, 1)))

    def coeffs(mesh: PolyMesh) -> CoeffField:
        return CoeffField.regions(mesh, {GREY: alpha_grey, WHITE: alpha_white}, d_ext, {WHITE: d_axn})

    return Scenario(
        name="two-region",
        domain=(0.0, 0.0, length, height),
        T=T,
        c0=c0,
        coeffs=coeffs,
        label_mesh=label_mesh,
        defaults={"theta": 0.5, "eta0": 2.0, "use_facet_count": True, "tol": 1e-10, "epsilon": 1e-8},
        params={"seeding": seeding, "far_region_x": far_region_x, "band": list(band)},
    )


CATALOG = {
    "mms-linear-time": mms_linear_time,
    "mms-exp-time": mms_exp_time,
    "wave": wave,
    "two-region": two_region,
}


def scenario_catalog() -> dict[str, Callable[..., Scenario]]:
    return dict(CATALOG)


def get_scenario(name: str, **params) -> Scenario:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; available: {sorted(CATALOG)}") from None
    return factory(**params)
