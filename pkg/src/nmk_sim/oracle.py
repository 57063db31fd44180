"""Brute-force references: direct star-geometry discretization and a
Lindblad integrator for the delta-kernel (Markovian) limit.

The star oracle shares no machinery with the chain pipeline: modes sit on a
uniform frequency grid with midpoint couplings g_k = vhat(w_k) sqrt(dw), so
agreement between the two is a genuine cross-check of the quadrature and
Lanczos steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dynamics import StepControl, Trajectory, _collect, _propagate_const
from .errors import ShapeMismatch, StepControlFailure
from .fock import (
    SystemModel,
    TruncatedSpace,
    _bath_local,
    _block_lower,
    _system_on_space,
    enumerate_basis,
)
from .kernels import RegularizedCoupling


@dataclass(frozen=True)
class StarDiscretization:
    """Uniform-grid bath modes w_k with couplings g_k = vhat(w_k) sqrt(dw)."""

    omegas: np.ndarray
    couplings: np.ndarray
    count: int
    norm_sq_gap: float    # relative gap between sum |g|^2 and the cutoff norm

    @classmethod
    def from_coupling(cls, coupling: RegularizedCoupling, omega_c: float,
                      count: int):
        dw = 2.0 * omega_c / count
        omegas = -omega_c + (np.arange(count) + 0.5) * dw
        g = np.asarray(coupling.vhat(omegas)) * math.sqrt(dw)
        target = coupling.cutoff_l2_norm(omega_c) ** 2
        got = float(np.sum(np.abs(g) ** 2))
        gap = abs(got - target) / max(target, 1e-300)
        return cls(omegas, g, count, gap)


def _star_hamiltonian(model: SystemModel, stars, space: TruncatedSpace):
    if len(stars) != space.baths:
        raise ShapeMismatch("need one StarDiscretization per bath")
    for star in stars:
        if star.count != space.modes:
            raise ShapeMismatch("star mode count inconsistent with the space")
    dim = space.dimension
    h = sp.csr_matrix((dim, dim), dtype=complex)
    idx = np.arange(dim)
    from .fock import _occupation_table

    table, _ = _occupation_table(space.modes, space.cap)
    for alpha, star in enumerate(stars):
        diag_block = table @ star.omegas
        shift = space.block_size ** (space.baths - 1 - alpha)
        h = h + sp.diags(diag_block[(idx // shift) % space.block_size],
                         format="csr", dtype=complex)
        l_full = _system_on_space(space, model.jump_matrix(alpha))
        for k in range(space.modes):
            if star.couplings[k] == 0.0:
                continue
            lower = _bath_local(space, alpha, _block_lower(space, k))
            term = star.couplings[k] * (l_full @ lower.conj().T)
            h = h + term + term.conj().T
    for support, mat, profile in model.hs_terms:
        if not profile.is_constant:
            raise StepControlFailure(
                "star oracle supports constant system profiles only")
        from .fock import embed_system_operator

        h = h + _system_on_space(
            space, embed_system_operator(model.n, model.d, support, mat))
    return h


def star_evolve(model: SystemModel, stars, cap: int, psi0, t_final: float,
                dt_control: StepControl | None = None,
                keep_states: bool = False,
                space: TruncatedSpace | None = None) -> Trajectory:
    """Unitary trajectory on the star-geometry truncated space."""
    ctl = dt_control or StepControl()
    stars = list(stars)
    if space is None:
        space = enumerate_basis(model.n, model.d, len(stars), stars[0].count, cap)
    h = _star_hamiltonian(model, stars, space)
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (space.dimension,):
        raise ShapeMismatch("initial state has wrong dimension")
    n_out = max(int(round(t_final / ctl.out_step)), 1)
    times = np.linspace(0.0, t_final, n_out + 1)
    states = _propagate_const(h, psi0, times, ctl)
    return _collect(space, times, states, keep_states, oracle=True)


def lindblad_evolve(model: SystemModel, rates, rho0, t_final: float,
                    out_step: float = 0.05, tol: float = 1e-10,
                    max_halvings: int = 16):
    """Density-matrix trajectory of d rho/dt = -i [H_S, rho]
    + sum_a Gamma_a (L rho L^dag - (1/2) {L^dag L, rho}).

    Fourth-order Runge-Kutta on the vectorized density matrix with global
    step halving until successive refinements agree to `tol`.  Returns
    (times, rhos) with rhos of shape (T, ds, ds).
    """
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0):
        raise ValueError("Lindblad rates must be nonnegative")
    rho0 = np.asarray(rho0, dtype=complex)
    ds = model.sys_dim
    if rho0.shape != (ds, ds):
        raise ShapeMismatch("initial density matrix has wrong shape")
    hs = model.hs_matrix(0.0)
    if model.time_dependent:
        raise StepControlFailure("lindblad oracle supports constant H_S only")
    ls = [model.jump_matrix(a) for a in range(rates.size)]
    lduls = [l.conj().T @ l for l in ls]

    def rhs(rho):
        out = -1j * (hs @ rho - rho @ hs)
        for g, l, ldl in zip(rates, ls, lduls):
            out = out + g * (l @ rho @ l.conj().T - 0.5 * (ldl @ rho + rho @ ldl))
        return out

    def rk4(rho, dt):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        return rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    n_out = max(int(round(t_final / out_step)), 1)
    times = np.linspace(0.0, t_final, n_out + 1)

    def run(n_sub):
        rhos = [rho0]
        rho = rho0
        for t0, t1 in zip(times[:-1], times[1:]):
            dt = (t1 - t0) / n_sub
            for _ in range(n_sub):
                rho = rk4(rho, dt)
            rhos.append(rho)
        return np.array(rhos)

    n_sub = 4
    prev = run(n_sub)
    for _ in range(max_halvings):
        n_sub *= 2
        cur = run(n_sub)
        if float(np.max(np.abs(cur - prev))) < tol:
            return times, cur
        prev = cur
    raise StepControlFailure("lindblad step controller failed to converge")
