"""Steady-state heat conduction for rasterized devices plus the lumped bridge model.

The 2-D solver treats the membrane as a conducting sheet, div(kappa(T) t grad T)
+ q = 0, and handles the temperature dependence of kappa by Picard iteration
over a 5-point finite-volume operator with harmonically averaged face
conductances. The lumped model collapses the structure to an isothermal island
drained by the bridges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .device import UM_PER_CM, DeviceLayout, GridError, MaterialModel, ThermalGrid


class ThermalModelError(RuntimeError):
    """The lumped model cannot bracket a solution."""


def kappa(material: MaterialModel, t_k):
    """Thermal conductivity at temperature t_k, in W K^-1 cm^-1."""
    t = np.asarray(t_k, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("temperature must be positive")
    out = material.kappa_ref_w_per_k_cm * (t / material.t_ref_k) ** material.exponent
    return out if out.ndim else float(out)


def kappa_integral(material: MaterialModel, t_lo_k: float, t_hi_k: float) -> float:
    """Closed-form integral of kappa(T) dT over [t_lo_k, t_hi_k], in W cm^-1."""
    if not 0.0 < t_lo_k <= t_hi_k:
        raise ValueError("need 0 < t_lo <= t_hi")
    p = material.exponent
    k0 = material.kappa_ref_w_per_k_cm
    tr = material.t_ref_k
    if p == -1.0:
        return k0 * tr * math.log(t_hi_k / t_lo_k)
    return k0 / ((p + 1.0) * tr**p) * (t_hi_k ** (p + 1.0) - t_lo_k ** (p + 1.0))


def bridge_conductance_factor_cm(layout: DeviceLayout) -> float:
    """Geometric conductance of all bridges in parallel, sum(A_i / L_i), in cm."""
    t_um = layout.membrane.thickness_um
    total_um = sum(b.width_um * t_um / b.length_um for b in layout.bridges)
    return total_um / UM_PER_CM


def lumped_temperature(
    layout: DeviceLayout,
    p_abs_w: float,
    t_bath_k: float,
    t_tol_k: float = 1e-6,
    t_max_k: float = 1e4,
) -> float:
    """Isothermal-island temperature at a given absorbed power.

    Solves p_abs = sum(A/L) * integral(kappa, bath..island) by bisection on
    [t_bath_k, t_max_k] to t_tol_k. The island is bridge-limited: the body of
    the device adds no thermal resistance in this approximation.
    """
    if t_bath_k <= 0.0:
        raise ValueError("bath temperature must be positive")
    if p_abs_w < 0.0:
        raise ValueError("absorbed power must be non-negative")
    if p_abs_w == 0.0:
        return t_bath_k
    target = p_abs_w / bridge_conductance_factor_cm(layout)
    if kappa_integral(layout.material, t_bath_k, t_max_k) < target:
        raise ThermalModelError("no bracket: island temperature exceeds the search limit")
    lo, hi = t_bath_k, t_max_k
    while hi - lo > t_tol_k:
        mid = 0.5 * (lo + hi)
        if kappa_integral(layout.material, t_bath_k, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def absorbed_power_for_temperature(
    layout: DeviceLayout, t_target_k: float, t_bath_k: float
) -> float:
    """Absorbed power that holds the island at t_target_k (closed form)."""
    if t_target_k < t_bath_k:
        raise ValueError("target temperature below the bath")
    if t_target_k == t_bath_k:
        return 0.0
    return bridge_conductance_factor_cm(layout) * kappa_integral(
        layout.material, t_bath_k, t_target_k
    )


@dataclass(frozen=True)
class TemperatureField:
    """Solved temperature map; NaN on void cells."""

    grid: ThermalGrid
    t_k: np.ndarray

    def __post_init__(self) -> None:
        self.t_k.setflags(write=False)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float        # relative energy imbalance, recomputed from the field
    converged: bool
    tol: float
    max_rel_change: float  # largest relative temperature update in the last pass

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "tol": self.tol,
            "max_rel_change": self.max_rel_change,
        }


def _sheet_conductance(grid: ThermalGrid, t_k: np.ndarray) -> np.ndarray:
    """Per-cell kappa(T) * thickness in W/K (per square), zero on void cells."""
    g = np.zeros(grid.shape)
    active = grid.active()
    g[active] = (
        kappa(grid.material, t_k[active])
        * grid.kappa_scale[active]
        / UM_PER_CM
        * grid.thickness_um[active]
    )
    return g


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    m = (a > 0.0) & (b > 0.0)
    out[m] = 2.0 * a[m] * b[m] / (a[m] + b[m])
    return out


def _face_conductances(grid: ThermalGrid, t_k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g = _sheet_conductance(grid, t_k)
    gh = _harmonic(g[:, :-1], g[:, 1:])   # between [j, i] and [j, i+1]
    gv = _harmonic(g[:-1, :], g[1:, :])   # between [j, i] and [j+1, i]
    return gh, gv


def _face_pairs(grid: ThermalGrid, t_k: np.ndarray):
    ny, nx = grid.shape
    gh, gv = _face_conductances(grid, t_k)
    yield (np.s_[:, : nx - 1], np.s_[:, 1:], gh)
    yield (np.s_[: ny - 1, :], np.s_[1:, :], gv)


def _energy_imbalance(grid: ThermalGrid, t_k: np.ndarray) -> float:
    """|flux into fixed cells - total source| / total source; 0 when sourceless."""
    total_q = float(grid.source_w.sum())
    if total_q <= 0.0:
        return 0.0
    fixed = grid.dirichlet & grid.active()
    free = grid.active() & ~fixed
    influx = 0.0
    for sa, sb, g in _face_pairs(grid, t_k):
        fa, fb = fixed[sa], fixed[sb]
        ua, ub = free[sa], free[sb]
        flow = g * np.where(ua & fb, t_k[sa] - t_k[sb], 0.0)
        influx += float(flow.sum())
        flow = g * np.where(ub & fa, t_k[sb] - t_k[sa], 0.0)
        influx += float(flow.sum())
    return abs(influx - total_q) / total_q


def energy_residual(field: TemperatureField) -> float:
    """Recompute the relative energy imbalance directly from the field."""
    return _energy_imbalance(field.grid, field.t_k)


def _assemble(grid: ThermalGrid, t_k: np.ndarray, free: np.ndarray, fixed: np.ndarray):
    n_free = int(free.sum())
    index = np.full(grid.shape, -1, dtype=np.int64)
    index[free] = np.arange(n_free)
    diag = np.zeros(n_free)
    rhs = grid.source_w[free].astype(float)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for sa, sb, g in _face_pairs(grid, t_k):
        ia = index[sa].ravel()
        ib = index[sb].ravel()
        gg = g.ravel()
        ta = t_k[sa].ravel()
        tb = t_k[sb].ravel()
        fa = fixed[sa].ravel()
        fb = fixed[sb].ravel()

        both = (ia >= 0) & (ib >= 0) & (gg > 0.0)
        np.add.at(diag, ia[both], gg[both])
        np.add.at(diag, ib[both], gg[both])
        rows.append(ia[both])
        cols.append(ib[both])
        vals.append(-gg[both])
        rows.append(ib[both])
        cols.append(ia[both])
        vals.append(-gg[both])

        m = (ia >= 0) & fb & (gg > 0.0)
        np.add.at(diag, ia[m], gg[m])
        np.add.at(rhs, ia[m], gg[m] * tb[m])
        m = (ib >= 0) & fa & (gg > 0.0)
        np.add.at(diag, ib[m], gg[m])
        np.add.at(rhs, ib[m], gg[m] * ta[m])

    rows.append(np.arange(n_free))
    cols.append(np.arange(n_free))
    vals.append(diag)
    a = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_free, n_free),
    ).tocsr()
    return a, rhs


def solve_steady_state(
    grid: ThermalGrid,
    t_bath_k: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> tuple[TemperatureField, SolveReport]:
    """Solve the nonlinear conduction problem on the grid.

    Picard iteration: the operator is assembled with face conductances from
    the current iterate and the linear system is solved directly; the update
    is halved whenever it reverses direction against the previous one.
    Convergence requires both the largest relative temperature change and the
    recomputed energy imbalance to fall below tol. Exhausting max_iter
    returns converged=False instead of raising; structural problems
    (disconnected grid) raise GridError.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    grid.validate()
    active = grid.active()
    if not active.any():
        raise GridError("grid has no active cells")
    fixed = grid.dirichlet & active
    free = active & ~fixed

    t = np.full(grid.shape, np.nan)
    if t_bath_k is not None:
        t[fixed] = t_bath_k
    else:
        t[fixed] = grid.dirichlet_k[fixed]
    bath = float(np.min(t[fixed]))
    t[free] = bath

    iterations = 0
    rel = 0.0
    res = _energy_imbalance(grid, t)
    converged = res <= tol
    prev_delta: np.ndarray | None = None
    while not converged and iterations < max_iter:
        iterations += 1
        a, b = _assemble(grid, t, free, fixed)
        t_new = spsolve(a, b)
        delta = t_new - t[free]
        if prev_delta is not None and float(np.dot(delta, prev_delta)) < 0.0:
            delta = 0.5 * delta
        rel = float(np.max(np.abs(delta) / t[free])) if delta.size else 0.0
        t[free] = t[free] + delta
        prev_delta = delta
        res = _energy_imbalance(grid, t)
        converged = rel < tol and res <= tol

    field = TemperatureField(grid=grid, t_k=t)
    report = SolveReport(
        iterations=iterations,
        residual=res,
        converged=converged,
        tol=tol,
        max_rel_change=rel,
    )
    return field, report
