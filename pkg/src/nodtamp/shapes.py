"""Procedural point-cloud shapes for the synthetic tabletop tasks.

All builders return (N, 3) arrays in a local frame whose origin is the base
center at z = 0, deterministic for a given scale. Densities are chosen so
contact detection and sphere collision checking behave like solid surfaces.
"""

from __future__ import annotations

import numpy as np

# Cup and receptacle dimensions at scale 1 (meters).
CUP_RADIUS = 0.025
CUP_HEIGHT = 0.06
HANDLE_ARC_RADIUS = 0.035
HANDLE_HALF_ANGLE = np.pi / 4
HANDLE_HALF_WIDTH = 0.003

PEG_RADIUS = 0.01
PEG_HEIGHT = 0.07
COLLAR_RADIUS = 0.018
COLLAR_HEIGHT = 0.01

STAND_HALF_WIDTH = 0.04
STAND_HEIGHT = 0.025
BORE_RADIUS = 0.0165
BORE_FLOOR = 0.005  # blind hole: bore floor height above the table

BIN_HALF_WIDTH = 0.08
BIN_WALL_HEIGHT = 0.05

SLOT_HALF_DEPTH = 0.09  # x, open front at +x
SLOT_HALF_WIDTH = 0.08  # y
SLOT_CEILING = 0.105


def _ring(radius: float, z: float, n: int) -> np.ndarray:
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([radius * np.cos(th), radius * np.sin(th), np.full(n, z)])


def _cylinder_shell(radius: float, z0: float, z1: float, n_around: int, n_z: int) -> np.ndarray:
    return np.concatenate([_ring(radius, z, n_around) for z in np.linspace(z0, z1, n_z)])


def _disk(radius: float, z: float, spacing: float, r_inner: float = 0.0) -> np.ndarray:
    """Concentric rings from r_inner to radius at roughly uniform spacing."""
    rows = []
    if r_inner == 0.0:
        rows.append(np.array([[0.0, 0.0, z]]))
        r_inner = spacing
    for r in np.arange(r_inner, radius + 1e-9, spacing):
        n = max(6, int(np.ceil(2 * np.pi * r / spacing)))
        rows.append(_ring(r, z, n))
    return np.concatenate(rows)


def _plane_grid(xs: np.ndarray, ys: np.ndarray, z: float) -> np.ndarray:
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])


def _wall_x(x: float, y0: float, y1: float, z0: float, z1: float, spacing: float) -> np.ndarray:
    ys = np.arange(y0, y1 + 1e-9, spacing)
    zs = np.arange(z0, z1 + 1e-9, spacing)
    gy, gz = np.meshgrid(ys, zs, indexing="ij")
    return np.column_stack([np.full(gy.size, x), gy.ravel(), gz.ravel()])


def _wall_y(y: float, x0: float, x1: float, z0: float, z1: float, spacing: float) -> np.ndarray:
    xs = np.arange(x0, x1 + 1e-9, spacing)
    zs = np.arange(z0, z1 + 1e-9, spacing)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    return np.column_stack([gx.ravel(), np.full(gx.size, y), gz.ravel()])


def peg(scale: float = 1.0) -> np.ndarray:
    """Cylindrical peg with a wider collar at the top (breaks flip symmetry)."""
    s = scale
    shaft = _cylinder_shell(PEG_RADIUS * s, 0.0, (PEG_HEIGHT - COLLAR_HEIGHT) * s, 14, 10)
    collar = _cylinder_shell(
        COLLAR_RADIUS * s, (PEG_HEIGHT - COLLAR_HEIGHT) * s, PEG_HEIGHT * s, 20, 3
    )
    top = _disk(COLLAR_RADIUS * s, PEG_HEIGHT * s, 0.006 * s)
    bottom = _disk(PEG_RADIUS * s, 0.0, 0.006 * s)
    return np.concatenate([shaft, collar, top, bottom])


def stand(scale: float = 1.0) -> np.ndarray:
    """Square block with a blind vertical bore for the peg."""
    s = scale
    hw, h = STAND_HALF_WIDTH * s, STAND_HEIGHT * s
    rb = BORE_RADIUS * s
    xs = np.arange(-hw, hw + 1e-9, 0.007 * s)
    top = _plane_grid(xs, xs, h)
    top = top[np.hypot(top[:, 0], top[:, 1]) > rb + 0.002 * s]
    bore_wall = _cylinder_shell(rb, BORE_FLOOR * s, h, 18, 4)
    bore_floor = _disk(rb, BORE_FLOOR * s, 0.004 * s)
    walls = np.concatenate(
        [
            _wall_x(-hw, -hw, hw, 0.0, h, 0.008 * s),
            _wall_x(hw, -hw, hw, 0.0, h, 0.008 * s),
            _wall_y(-hw, -hw, hw, 0.0, h, 0.008 * s),
            _wall_y(hw, -hw, hw, 0.0, h, 0.008 * s),
        ]
    )
    # Exterior tab on the +x wall: breaks the square's yaw symmetry so pose
    # registration is unambiguous.
    tab = _wall_x(hw + 0.01 * s, -0.012 * s, 0.012 * s, 0.0, h, 0.006 * s)
    return np.concatenate([top, bore_wall, bore_floor, walls, tab])


def cup(scale: float = 1.0) -> np.ndarray:
    """Open cup: cylindrical shell, floor, and a handle arc toward +x."""
    s = scale
    shell = _cylinder_shell(CUP_RADIUS * s, 0.0, CUP_HEIGHT * s, 20, 9)
    floor = _disk(CUP_RADIUS * s, 0.0, 0.006 * s)
    # Handle: arc in the xz plane centered on the wall at mid height, a thin
    # tube approximated by two parallel arcs offset in y.
    phi = np.linspace(-HANDLE_HALF_ANGLE, HANDLE_HALF_ANGLE, 18)
    ax = (CUP_RADIUS + HANDLE_ARC_RADIUS * np.cos(phi)) * s
    az = (CUP_HEIGHT / 2 + HANDLE_ARC_RADIUS * np.sin(phi)) * s
    handle = np.concatenate(
        [
            np.column_stack([ax, np.full(phi.size, dy * s), az])
            for dy in (-HANDLE_HALF_WIDTH, HANDLE_HALF_WIDTH)
        ]
    )
    return np.concatenate([shell, floor, handle])


def handle_tip(scale: float = 1.0) -> np.ndarray:
    """Outermost handle point in the cup's local frame."""
    return np.array([(CUP_RADIUS + HANDLE_ARC_RADIUS) * scale, 0.0, CUP_HEIGHT / 2 * scale])


def open_bin(scale: float = 1.0) -> np.ndarray:
    """Open-top bin: square floor with four low walls."""
    s = scale
    hw, h = BIN_HALF_WIDTH * s, BIN_WALL_HEIGHT * s
    xs = np.arange(-hw, hw + 1e-9, 0.006 * s)
    floor = _plane_grid(xs, xs, 0.0)
    walls = np.concatenate(
        [
            _wall_x(-hw, -hw, hw, 0.0, h, 0.008 * s),
            _wall_x(hw, -hw, hw, 0.0, h, 0.008 * s),
            _wall_y(-hw, -hw, hw, 0.0, h, 0.008 * s),
            _wall_y(hw, -hw, hw, 0.0, h, 0.008 * s),
        ]
    )
    # Exterior tab on the +x wall: breaks the square's yaw symmetry so pose
    # registration is unambiguous.
    tab = _wall_x(hw + 0.012 * s, -0.015 * s, 0.015 * s, 0.0, h, 0.006 * s)
    return np.concatenate([floor, walls, tab])


def slot(scale: float = 1.0) -> np.ndarray:
    """Covered shelf: floor, low ceiling, back and side walls, open front (+x)."""
    s = scale
    hd, hw, hc = SLOT_HALF_DEPTH * s, SLOT_HALF_WIDTH * s, SLOT_CEILING * s
    xs = np.arange(-hd, hd + 1e-9, 0.006 * s)
    ys = np.arange(-hw, hw + 1e-9, 0.006 * s)
    floor = _plane_grid(xs, ys, 0.0)
    ceiling = _plane_grid(np.arange(-hd, hd + 1e-9, 0.008 * s),
                          np.arange(-hw, hw + 1e-9, 0.008 * s), hc)
    back = _wall_x(-hd, -hw, hw, 0.0, hc, 0.008 * s)
    sides = np.concatenate(
        [
            _wall_y(-hw, -hd, hd, 0.0, hc, 0.008 * s),
            _wall_y(hw, -hd, hd, 0.0, hc, 0.008 * s),
        ]
    )
    return np.concatenate([floor, ceiling, back, sides])


BUILDERS = {
    "peg": peg,
    "stand": stand,
    "cup": cup,
    "bin": open_bin,
    "slot": slot,
}


def build(category: str, scale: float = 1.0) -> np.ndarray:
    if category not in BUILDERS:
        raise KeyError(category)
    return BUILDERS[category](scale)
