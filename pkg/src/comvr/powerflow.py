"""Newton-Raphson AC power flow in polar form.

The feeder head is the slack (1.0 p.u. at angle 0); every other bus is PQ.
The Jacobian is assembled in the H/N/J/L block layout with the voltage
columns scaled by V, so the correction vector is [dtheta, dV/V].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .network import NetworkModel, build_admittance


class PowerFlowError(RuntimeError):
    """Raised when Newton-Raphson does not converge."""


@dataclass(frozen=True)
class VoltageSolution:
    bus_ids: tuple[int, ...]
    vm: np.ndarray  # p.u.
    va: np.ndarray  # rad
    s_injection: np.ndarray  # p.u., net injected power at every bus (slack included)
    base_mva: float
    iterations: int
    max_mismatch: float
    slack: int = 0

    @property
    def v(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    @property
    def slack_power_kw(self) -> complex:
        """Complex power drawn from the upstream grid, kW + j kvar."""
        return complex(self.s_injection[self.slack]) * self.base_mva * 1e3

    def voltage(self, bus: int) -> complex:
        return complex(self.v[self.bus_ids.index(bus)])


@dataclass(frozen=True)
class Jacobian:
    H: np.ndarray
    N: np.ndarray
    J: np.ndarray
    L: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return np.block([[self.H, self.N], [self.J, self.L]])


def injections_pu(model: NetworkModel, injections_kw) -> np.ndarray:
    """Convert per-bus net injections (kW + j kvar, bus order) to p.u."""
    return np.asarray(injections_kw, dtype=complex) / (model.base_mva * 1e3)


def _calc_power(Y, V):
    return V * np.conj(Y @ V)


class _Pattern:
    """Sparsity pattern of the Jacobian, fixed by Y and the slack position."""

    def __init__(self, Y, pq):
        coo = sparse.coo_matrix(Y)
        n = Y.shape[0]
        pos = -np.ones(n, dtype=int)
        pos[pq] = np.arange(len(pq))
        keep = (pos[coo.row] >= 0) & (pos[coo.col] >= 0)
        self.r, self.c, self.y = coo.row[keep], coo.col[keep], coo.data[keep]
        self.pr, self.pc = pos[self.r], pos[self.c]
        self.pq = pq
        self.npq = len(pq)
        m = self.npq
        self.rows = np.concatenate([self.pr, self.pr, self.pr + m, self.pr + m, np.arange(m), np.arange(m), np.arange(m) + m, np.arange(m) + m])
        self.cols = np.concatenate([self.pc, self.pc + m, self.pc, self.pc + m, np.arange(m), np.arange(m) + m, np.arange(m), np.arange(m) + m])

    def assemble(self, Y, V):
        """[[H, N], [J, L]] with the voltage columns already multiplied by |V|."""
        Ibus = Y @ V
        yv = self.y * V[self.c]
        d_va = -1j * V[self.r] * np.conj(yv)
        d_vm = V[self.r] * np.conj(yv)  # times |V_c| already folded in
        Vp, Ip = V[self.pq], Ibus[self.pq]
        diag_va = 1j * Vp * np.conj(Ip)
        diag_vm = np.conj(Ip) * Vp
        vals = np.concatenate(
            [d_va.real, d_vm.real, d_va.imag, d_vm.imag, diag_va.real, diag_vm.real, diag_va.imag, diag_vm.imag]
        )
        m = self.npq
        return sparse.csc_matrix((vals, (self.rows, self.cols)), shape=(2 * m, 2 * m))


def _assemble(Y, V, pq):
    return _Pattern(sparse.csr_matrix(Y), pq).assemble(sparse.csr_matrix(Y), V)


def jacobian(model: NetworkModel, vm, va) -> Jacobian:
    """Dense H/N/J/L blocks at the given operating point, non-slack buses only."""
    Y = build_admittance(model)
    V = np.asarray(vm) * np.exp(1j * np.asarray(va))
    pq = np.array([i for i, b in enumerate(model.buses) if b.kind != "feeder-head"], dtype=int)
    full = _assemble(Y, V, pq).toarray()
    n = len(pq)
    return Jacobian(full[:n, :n], full[:n, n:], full[n:, :n], full[n:, n:])


def mismatch(model: NetworkModel, vm, va, s_spec_pu) -> np.ndarray:
    """[dP; dQ] = specified minus calculated injection at the non-slack buses."""
    Y = build_admittance(model)
    V = np.asarray(vm) * np.exp(1j * np.asarray(va))
    pq = [i for i, b in enumerate(model.buses) if b.kind != "feeder-head"]
    d = (np.asarray(s_spec_pu) - _calc_power(Y, V))[pq]
    return np.concatenate([d.real, d.imag])


def solve(
    model: NetworkModel,
    injections_kw,
    tol: float = 1e-8,
    max_iter: int = 50,
    Y=None,
) -> VoltageSolution:
    """Solve for bus voltages given net injections (generation minus load, kW/kvar)."""
    if Y is None:
        Y = build_admittance(model)
    Y = sparse.csr_matrix(Y)
    S = injections_pu(model, injections_kw)
    n = len(model.buses)
    slack = model.index[model.head]
    pq = np.array([i for i in range(n) if i != slack], dtype=int)
    npq = len(pq)

    vm = np.ones(n)
    va = np.zeros(n)
    V = vm * np.exp(1j * va)

    def residual(V):
        d = (S - _calc_power(Y, V))[pq]
        return np.concatenate([d.real, d.imag])

    F = residual(V)
    err = np.max(np.abs(F)) if npq else 0.0
    it = 0
    pattern = _Pattern(Y, pq)
    while err > tol:
        if it >= max_iter:
            raise PowerFlowError(f"no convergence after {max_iter} iterations (mismatch {err:.3e})")
        A = pattern.assemble(Y, V)
        dx = spsolve(A, F)
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("singular Jacobian")
        va[pq] += dx[:npq]
        vm[pq] *= 1.0 + dx[npq:]
        if np.any(vm <= 0) or not np.all(np.isfinite(vm)):
            raise PowerFlowError("voltage collapse during iteration")
        V = vm * np.exp(1j * va)
        F = residual(V)
        err = np.max(np.abs(F))
        it += 1

    s_inj = _calc_power(Y, V)
    s_inj[pq] = S[pq]
    return VoltageSolution(tuple(model.bus_ids), vm.copy(), va.copy(), s_inj, model.base_mva, it, float(err), slack)


def losses_kw(model: NetworkModel, sol: VoltageSolution) -> complex:
    """Series losses summed over segments, kW + j kvar."""
    idx = model.index
    V = sol.v
    total = 0j
    for s in model.segments:
        z = s.impedance / model.z_base
        i = (V[idx[s.from_bus]] - V[idx[s.to_bus]]) / z
        total += z * abs(i) ** 2
    return total * model.base_mva * 1e3


def min_voltage(sol: VoltageSolution) -> tuple[int, float]:
    vmin = float(np.min(sol.vm))
    bus = min(b for b, v in zip(sol.bus_ids, sol.vm) if v == vmin)
    return bus, vmin


def max_voltage(sol: VoltageSolution) -> tuple[int, float]:
    vmax = float(np.max(sol.vm))
    bus = min(b for b, v in zip(sol.bus_ids, sol.vm) if v == vmax)
    return bus, vmax


def voltage_profile_metric(sol_or_vm, v_sp: float = 1.0) -> float:
    """Sum of squared deviations of bus voltage magnitudes from the set point."""
    vm = sol_or_vm.vm if isinstance(sol_or_vm, VoltageSolution) else np.asarray(sol_or_vm, dtype=float)
    return float(np.sum((vm - v_sp) ** 2))
