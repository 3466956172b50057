"""Newton-Raphson AC power flow (polar form) and the linear DC approximation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GridError, GridModel


@dataclass(frozen=True)
class InjectionProfile:
    """Net bus injections (generation minus load) and PV/slack voltage setpoints."""

    p_mw: np.ndarray
    q_mvar: np.ndarray
    vset: np.ndarray
    renewable_mw: np.ndarray | None = None   # per generator, file order; 0 for conventional

    def __post_init__(self):
        for attr in ("p_mw", "q_mvar", "vset"):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=np.float64))


@dataclass(frozen=True)
class PowerFlowSolution:
    vm: np.ndarray
    va: np.ndarray
    branch_p_mw: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    message: str = ""

    @property
    def max_vm(self) -> float:
        return float(np.max(self.vm))


def mismatch(grid: GridModel, inj: InjectionProfile, vm: np.ndarray, va: np.ndarray) -> np.ndarray:
    """Stacked [dP(pv+pq), dQ(pq)] in p.u. for the given polar state."""
    V = vm * np.exp(1j * va)
    S = V * np.conj(grid.ybus @ V)
    Ssp = (inj.p_mw + 1j * inj.q_mvar) / grid.base_mva
    pvpq = np.r_[grid.pv, grid.pq]
    d = S - Ssp
    return np.r_[d.real[pvpq], d.imag[grid.pq]]


def branch_flows_mw(grid: GridModel, V: np.ndarray) -> np.ndarray:
    f, t = grid.branch_from, grid.branch_to
    ys = 1.0 / (grid.r + 1j * grid.x)
    i_from = (V[f] - V[t]) * ys + V[f] * 0.5j * grid.b
    return (V[f] * np.conj(i_from)).real * grid.base_mva


def _check_dims(grid: GridModel, inj: InjectionProfile):
    n = grid.n_bus
    for attr in ("p_mw", "q_mvar", "vset"):
        if getattr(inj, attr).shape != (n,):
            raise GridError(f"injection {attr} has shape {getattr(inj, attr).shape}, grid has {n} buses")


def solve_ac_power_flow(grid: GridModel, inj: InjectionProfile, tol: float = 1e-8, max_iter: int = 20,
                        v0: tuple[np.ndarray, np.ndarray] | None = None) -> PowerFlowSolution:
    """Full Newton-Raphson on the polar power-mismatch equations.

    Flat start unless ``v0 = (vm, va)`` is given. A singular or non-finite
    Newton step ends the solve with ``converged=False`` instead of raising.
    """
    _check_dims(grid, inj)
    n = grid.n_bus
    Y = grid.ybus
    pv, pq = grid.pv, grid.pq
    pvpq = np.r_[pv, pq]
    npvpq = len(pvpq)
    if v0 is None:
        vm, va = np.ones(n), np.zeros(n)
    else:
        vm, va = np.array(v0[0], dtype=float), np.array(v0[1], dtype=float)
    ctrl = np.r_[grid.slack, pv]
    vm[ctrl] = inj.vset[ctrl]
    va[grid.slack] = 0.0
    Ssp = (inj.p_mw + 1j * inj.q_mvar) / grid.base_mva

    V = vm * np.exp(1j * va)
    it = 0
    message = ""
    while True:
        I = Y @ V
        d = V * np.conj(I) - Ssp
        F = np.r_[d.real[pvpq], d.imag[pq]]
        norm = float(np.max(np.abs(F))) if F.size else 0.0
        if not np.isfinite(norm):
            message = "non-finite mismatch"
            break
        if norm <= tol:
            break
        if it >= max_iter:
            message = f"no convergence in {max_iter} iterations"
            break
        Vn = V / np.abs(V)
        dS_dVa = 1j * V[:, None] * np.conj(np.diag(I) - Y * V[None, :])
        dS_dVm = V[:, None] * np.conj(Y * Vn[None, :]) + np.diag(np.conj(I) * Vn)
        J = np.block([
            [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
            [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            message = "singular Jacobian"
            break
        if not np.all(np.isfinite(dx)):
            message = "non-finite Newton step"
            break
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        V = vm * np.exp(1j * va)
        it += 1

    converged = np.isfinite(norm) and norm <= tol
    vm_out, va_out = np.abs(V), np.angle(V)
    va_out = va_out - va_out[grid.slack]
    return PowerFlowSolution(
        vm=vm_out, va=va_out,
        branch_p_mw=branch_flows_mw(grid, V) if np.all(np.isfinite(V)) else np.full(grid.n_branch, np.nan),
        converged=bool(converged), iterations=it, max_mismatch=norm, message=message or "converged",
    )


@dataclass(frozen=True)
class DCFlowResult:
    theta: np.ndarray
    flow_mw: np.ndarray
    loading_pct: np.ndarray
    overload_pct: np.ndarray


def solve_dc_power_flow(grid: GridModel, real_inj: np.ndarray) -> DCFlowResult:
    """B-theta solve; the slack entry of ``real_inj`` is replaced by the balancing residual."""
    if not grid.is_connected():
        raise GridError("DC power flow needs a connected grid")
    p = np.asarray(real_inj, dtype=np.float64).copy()
    if p.shape != (grid.n_bus,):
        raise GridError(f"real injection has shape {p.shape}, grid has {grid.n_bus} buses")
    s = grid.slack
    p[s] = -(p.sum() - p[s])
    f, t = grid.branch_from, grid.branch_to
    bser = 1.0 / grid.x
    n = grid.n_bus
    B = np.zeros((n, n))
    np.add.at(B, (f, f), bser)
    np.add.at(B, (t, t), bser)
    np.add.at(B, (f, t), -bser)
    np.add.at(B, (t, f), -bser)
    keep = np.array([i for i in range(n) if i != s])
    theta = np.zeros(n)
    if len(keep):
        theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], p[keep] / grid.base_mva)
    flow = (theta[f] - theta[t]) * bser * grid.base_mva
    with np.errstate(divide="ignore", invalid="ignore"):
        loading = np.where(np.isfinite(grid.rating), 100.0 * np.abs(flow) / grid.rating, 0.0)
    return DCFlowResult(theta=theta, flow_mw=flow, loading_pct=loading,
                        overload_pct=np.maximum(loading - 100.0, 0.0))


def two_bus_congestion(grid: GridModel, res_mw: float, under_forecast_mw: float) -> tuple[DCFlowResult, DCFlowResult]:
    """DC flows on the two-bus case for the actual RES output and for its under-forecast.

    The RES unit and the load share bus 1; the conventional slack at bus 0
    covers whatever the RES does not, so a lower forecast raises the
    predicted line flow by the forecast error.
    """
    load = float(grid.pd[1])
    actual = solve_dc_power_flow(grid, np.array([0.0, res_mw - load]))
    predicted = solve_dc_power_flow(grid, np.array([0.0, res_mw - under_forecast_mw - load]))
    return actual, predicted
