# pde_discovery/operators.py

"""
Spatial derivative operators shared by the solvers and the preprocessing step.

Derivative descriptors are short strings: "x", "xx", "xxx" along one axis, and
the 2D aggregates "x+y" (u_x + u_y) and "xx+yy" (the Laplacian).
"""

from typing import Dict, Iterable, Tuple

import numpy as np

from pde_discovery.errors import ConfigurationError
from pde_discovery.fields import GridSpec

# descriptor -> ((axis, order), ...)
DERIVATIVE_PARTS: Dict[str, Tuple[Tuple[str, int], ...]] = {
    "x": (("x", 1),),
    "xx": (("x", 2),),
    "xxx": (("x", 3),),
    "y": (("y", 1),),
    "yy": (("y", 2),),
    "x+y": (("x", 1), ("y", 1)),
    "xx+yy": (("x", 2), ("y", 2)),
}

# Largest eigenvalue magnitude of the 2nd-order central stencils, times h**order.
FD_STENCIL_RADIUS = {1: 1.0, 2: 4.0, 3: 2.6}


def derivative_order(descriptor: str) -> int:
    if not descriptor:
        return 0
    return DERIVATIVE_PARTS[descriptor][0][1]


# ------------------------------
# Finite differences
# ------------------------------

def fd_derivative(values: np.ndarray, axis: int, order: int, spacing: float, periodic: bool = False) -> np.ndarray:
    """
    Second-order accurate finite differences along one axis.

    Central stencils in the interior; one-sided stencils of matching accuracy
    at the edges so the array shape is preserved. Periodic axes wrap instead.
    """
    if order not in (1, 2, 3):
        raise ConfigurationError(f"Finite differences support derivative orders 1 to 3, got {order}.")
    u = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    n = u.shape[0]
    if n < 2 * order + 1:
        raise ConfigurationError(
            f"Order-{order} differences need at least {2 * order + 1} points along the axis, got {n}."
        )
    h = spacing

    if periodic:
        up1, um1 = np.roll(u, -1, axis=0), np.roll(u, 1, axis=0)
        if order == 1:
            out = (up1 - um1) / (2 * h)
        elif order == 2:
            out = (up1 - 2 * u + um1) / h**2
        else:
            up2, um2 = np.roll(u, -2, axis=0), np.roll(u, 2, axis=0)
            out = (0.5 * up2 - up1 + um1 - 0.5 * um2) / h**3
        return np.moveaxis(out, 0, axis)

    out = np.empty_like(u)
    if order == 1:
        out[1:-1] = (u[2:] - u[:-2]) / (2 * h)
        out[0] = (-1.5 * u[0] + 2 * u[1] - 0.5 * u[2]) / h
        out[-1] = (1.5 * u[-1] - 2 * u[-2] + 0.5 * u[-3]) / h
    elif order == 2:
        out[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
        out[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / h**2
        out[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / h**2
    else:
        out[2:-2] = (0.5 * u[4:] - u[3:-1] + u[1:-3] - 0.5 * u[:-4]) / h**3
        for i in (0, 1):
            out[i] = (-2.5 * u[i] + 9 * u[i + 1] - 12 * u[i + 2] + 7 * u[i + 3] - 1.5 * u[i + 4]) / h**3
        for i in (-1, -2):
            out[i] = (2.5 * u[i] - 9 * u[i - 1] + 12 * u[i - 2] - 7 * u[i - 3] + 1.5 * u[i - 4]) / h**3
    return np.moveaxis(out, 0, axis)


# ------------------------------
# Fourier pseudo-spectral operators on periodic grids
# ------------------------------

def _axis_wavenumbers(grid: GridSpec):
    """Wavenumbers laid out for rfftn over the spatial axes (x is the real-transformed axis)."""
    kx = 2 * np.pi * np.fft.rfftfreq(grid.nx, d=grid.dx)
    kx_odd = kx.copy()
    if grid.nx % 2 == 0:
        kx_odd[-1] = 0.0
    if not grid.is_2d:
        return {"x": (kx, kx_odd)}
    ky = 2 * np.pi * np.fft.fftfreq(grid.ny, d=grid.dy)
    ky_odd = ky.copy()
    if grid.ny % 2 == 0:
        ky_odd[grid.ny // 2] = 0.0
    return {
        "x": (kx[None, :], kx_odd[None, :]),
        "y": (ky[:, None], ky_odd[:, None]),
    }


def spectral_symbol(grid: GridSpec, descriptor: str) -> np.ndarray:
    """
    Fourier multiplier of a derivative descriptor, shaped like rfftn output.

    Odd derivatives drop the Nyquist mode so the operator stays real and
    skew-symmetric.
    """
    waves = _axis_wavenumbers(grid)
    shape = (grid.ny, grid.nx // 2 + 1) if grid.is_2d else (grid.nx // 2 + 1,)
    symbol = np.zeros(shape, dtype=complex)
    for axis, order in DERIVATIVE_PARTS[descriptor]:
        if axis not in waves:
            raise ConfigurationError(f"Derivative '{descriptor}' needs a '{axis}' axis the grid does not have.")
        k, k_odd = waves[axis]
        k_used = k_odd if order % 2 == 1 else k
        symbol = symbol + (1j * k_used) ** order
    return symbol


def to_spectral(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.rfftn(u, axes=(-2, -1)) if grid.is_2d else np.fft.rfft(u)


def from_spectral(u_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.is_2d:
        return np.fft.irfftn(u_hat, s=grid.spatial_shape, axes=(-2, -1))
    return np.fft.irfft(u_hat, n=grid.nx)


# ------------------------------
# Derivatives of a spatial state
# ------------------------------

def state_derivatives(u: np.ndarray, grid: GridSpec, descriptors: Iterable[str], method: str) -> Dict[str, np.ndarray]:
    """Evaluate each requested derivative descriptor of one spatial snapshot."""
    out = {}
    descriptors = [d for d in descriptors if d]
    if not descriptors:
        return out

    if method == "spectral":
        u_hat = to_spectral(u, grid)
        for d in descriptors:
            out[d] = from_spectral(spectral_symbol(grid, d) * u_hat, grid)
        return out

    axis_of = {"x": -1, "y": -2}
    spacing = {"x": grid.dx, "y": grid.dy if grid.is_2d else None}
    cache = {}
    for d in descriptors:
        total = np.zeros_like(u)
        for axis, order in DERIVATIVE_PARTS[d]:
            if axis == "y" and not grid.is_2d:
                raise ConfigurationError(f"Derivative '{d}' needs a 'y' axis the grid does not have.")
            key = (axis, order)
            if key not in cache:
                cache[key] = fd_derivative(u, axis_of[axis], order, spacing[axis], periodic=grid.periodic)
            total = total + cache[key]
        out[d] = total
    return out


def stiffness_radius(grid: GridSpec, descriptor: str, method: str) -> float:
    """Estimated spectral radius of a derivative operator (used for step-size bounds)."""
    radius = 0.0
    for axis, order in DERIVATIVE_PARTS[descriptor]:
        h = grid.dx if axis == "x" else grid.dy
        if method == "spectral":
            radius += (np.pi / h) ** order
        else:
            radius += FD_STENCIL_RADIUS[order] / h**order
    return radius
