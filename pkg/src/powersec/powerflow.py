"""AC power flow by Newton-Raphson in polar coordinates.

Loads follow an exponential static characteristic ``P = s * P0 * V**alpha_p``
(reactive power analogous).  A load bus whose voltage drops below
``v_critical`` during the iteration is latched to the constant admittance
that draws the characteristic's power at ``v_critical``.  Generator reactive
limits are enforced by switching PV buses to PQ.

Non-slack generator dispatch is scaled by the same ``load_scale`` as the
loads; the slack bus covers the remaining imbalance and losses.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .grid import NO_OUTAGE, NetworkCase, Outage

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadModel:
    alpha_p: float = 1.0
    alpha_q: float = 2.0
    v_critical: float = 0.7

    def __post_init__(self):
        if self.alpha_p < 0 or self.alpha_q < 0:
            raise ValueError("load exponents must be non-negative")
        if not 0 < self.v_critical < 1:
            raise ValueError("v_critical must lie in (0, 1)")


CONSTANT_POWER = LoadModel(0.0, 0.0, 0.7)


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-8
    max_iterations: int = 30
    flat_start: bool = True
    enforce_q_limits: bool = True
    max_q_rounds: int = 20

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class SystemState:
    """One power-flow result. Flows are MW/MVAr, voltages per-unit/radians."""

    v_mag: np.ndarray
    v_ang: np.ndarray
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    branch_s: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    load_scale: float
    outage: Outage = NO_OUTAGE
    converged: bool = False
    iterations: int = 0
    mismatch: float = np.inf
    transferred: np.ndarray = field(default=None, repr=False)
    branch_in_service: np.ndarray = field(default=None, repr=False)

    @property
    def losses(self) -> float:
        """Total active losses in MW over in-service branches."""
        return float(np.sum(self.p_from + self.p_to))


def effective_load(base_p: float, base_q: float, v: float, scale: float,
                   model: LoadModel) -> tuple[float, float]:
    """Voltage-dependent load at voltage ``v``.

    Below ``model.v_critical`` the load behaves as the constant admittance
    frozen at the critical voltage.
    """
    if v <= 0:
        raise ValueError("voltage must be positive")
    vc = model.v_critical
    if v >= vc:
        return scale * base_p * v ** model.alpha_p, scale * base_q * v ** model.alpha_q
    k = (v / vc) ** 2
    return scale * base_p * vc ** model.alpha_p * k, scale * base_q * vc ** model.alpha_q * k


@dataclass(frozen=True)
class _Network:
    ybus: np.ndarray
    f: np.ndarray
    t: np.ndarray
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    slack: int


@lru_cache(maxsize=8)
def _network(case: NetworkCase) -> _Network:
    n = case.n_buses
    base = case.base_mva
    f = np.array([case.bus_index(br.from_bus) for br in case.branches], dtype=np.intp)
    t = np.array([case.bus_index(br.to_bus) for br in case.branches], dtype=np.intp)
    r = np.array([br.r for br in case.branches])
    x = np.array([br.x for br in case.branches])
    b = np.array([br.b_charging for br in case.branches])
    tap = np.array([br.ratio for br in case.branches])
    on = np.array([br.in_service for br in case.branches], dtype=float)
    ys = 1.0 / (r + 1j * x)
    ytt = (ys + 0.5j * b) * on
    yff = ytt / tap ** 2
    yft = -ys / tap * on
    ytf = yft.copy()
    y = np.zeros((n, n), dtype=complex)
    np.add.at(y, (f, f), yff)
    np.add.at(y, (t, t), ytt)
    np.add.at(y, (f, t), yft)
    np.add.at(y, (t, f), ytf)
    y[np.diag_indices(n)] += 1j * np.array([bus.shunt_b for bus in case.buses])
    p0 = np.array([bus.base_load_p for bus in case.buses]) / base
    q0 = np.array([bus.base_load_q for bus in case.buses]) / base
    for arr in (y, yff, yft, ytf, ytt, p0, q0):
        arr.setflags(write=False)
    return _Network(y, f, t, yff, yft, ytf, ytt, p0, q0, case.slack_index)


def _loads(vm, p0, q0, scale, model: LoadModel, transferred):
    """Effective load (pu) and its derivative with respect to |V|."""
    vc = model.v_critical
    ap, aq = model.alpha_p, model.alpha_q
    vm_safe = np.maximum(vm, 1e-6)
    pl = scale * p0 * vm_safe ** ap
    ql = scale * q0 * vm_safe ** aq
    dpl = scale * p0 * ap * vm_safe ** (ap - 1)
    dql = scale * q0 * aq * vm_safe ** (aq - 1)
    if transferred.any():
        m = transferred
        gp = scale * p0[m] * vc ** (ap - 2)
        gq = scale * q0[m] * vc ** (aq - 2)
        pl[m] = gp * vm[m] ** 2
        ql[m] = gq * vm[m] ** 2
        dpl[m] = 2 * gp * vm[m]
        dql[m] = 2 * gq * vm[m]
    return pl, ql, dpl, dql


def _newton(ybus, v0, slack, pv, pq, p_spec, q_spec, p0, q0, scale, model,
            transferred, settings: SolverSettings):
    """Inner NR loop. Returns (V, converged, iterations, mismatch)."""
    v = v0.copy()
    vm = np.abs(v)
    va = np.angle(v)
    pvpq = np.r_[pv, pq]
    npvpq, npq = len(pvpq), len(pq)
    has_load = (p0 != 0) | (q0 != 0)

    def residual(v, vm):
        pl, ql, dpl, dql = _loads(vm, p0, q0, scale, model, transferred)
        s = v * np.conj(ybus @ v)
        mis = s - (p_spec - pl + 1j * (q_spec - ql))
        return np.r_[mis.real[pvpq], mis.imag[pq]], dpl, dql

    fvec, dpl, dql = residual(v, vm)
    norm = np.max(np.abs(fvec)) if fvec.size else 0.0
    it = 0
    while norm > settings.tolerance and it < settings.max_iterations:
        it += 1
        ibus = ybus @ v
        vnorm = v / vm
        ds_dvm = v[:, None] * np.conj(ybus * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
        ds_dva = 1j * v[:, None] * np.conj(np.diag(ibus) - ybus * v[None, :])
        ds_dvm[np.diag_indices_from(ds_dvm)] += dpl + 1j * dql
        jac = np.block([
            [ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq)]],
            [ds_dva.imag[np.ix_(pq, pvpq)], ds_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(jac, -fvec)
        except np.linalg.LinAlgError:
            return v, False, it, np.inf
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:npvpq + npq]
        if not np.all(np.isfinite(vm)) or np.any(vm <= 0):
            return v, False, it, np.inf
        v = vm * np.exp(1j * va)
        newly = has_load & ~transferred & (vm < model.v_critical)
        if newly.any():
            transferred |= newly
        fvec, dpl, dql = residual(v, vm)
        norm = np.max(np.abs(fvec)) if fvec.size else 0.0
        if not np.isfinite(norm) or norm > 1e6:
            return v, False, it, np.inf
    return v, norm <= settings.tolerance, it, norm


def solve(case: NetworkCase, load_scale: float = 1.0, outage: Outage = NO_OUTAGE,
          load_model: LoadModel = LoadModel(), settings: SolverSettings = SolverSettings(),
          initial: SystemState | None = None, outage_fraction: float = 1.0) -> SystemState:
    """Solve the AC power flow for ``case`` under ``load_scale`` and ``outage``.

    ``initial`` seeds the voltages (warm start); PV/slack magnitudes are
    always reset to their set-points. ``outage_fraction`` below 1 removes
    only that share of the outaged element (its admittance, or its active
    power and reactive range), which traces the path from the prefault state
    to the full outage. Non-convergence is reported through
    ``converged=False``, never raised.
    """
    lam = float(outage_fraction)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("outage_fraction must lie in [0, 1]")
    net = _network(case)
    n = case.n_buses
    base = case.base_mva
    ybus = net.ybus
    on = np.array([br.in_service for br in case.branches])
    if outage.kind == "line":
        k = outage.element_id
        if not case.branches[k].in_service:
            raise ValueError(f"branch {k} is already out of service")
        ybus = ybus.copy()
        f, t = net.f[k], net.t[k]
        ybus[f, f] -= lam * net.yff[k]
        ybus[t, t] -= lam * net.ytt[k]
        ybus[f, t] -= lam * net.yft[k]
        ybus[t, f] -= lam * net.ytf[k]
        on = on.astype(float)
        on[k] = 1.0 - lam
    gen_on = [float(g.in_service) for g in case.generators]
    if outage.kind == "generator":
        k = outage.element_id
        if not case.generators[k].in_service:
            raise ValueError(f"generator {k} is already out of service")
        if case.bus_index(case.generators[k].bus) == net.slack:
            raise ValueError("the slack generator cannot be outaged")
        gen_on[k] = 1.0 - lam

    kind = np.array([b.kind for b in case.buses])
    p_gen_spec = np.zeros(n)
    qmin = np.zeros(n)
    qmax = np.zeros(n)
    vset = np.ones(n)
    has_gen = np.zeros(n, dtype=bool)
    for g, share in zip(case.generators, gen_on):
        if share <= 0:
            continue
        i = case.bus_index(g.bus)
        has_gen[i] = True
        p_gen_spec[i] += share * g.p_set * load_scale / base
        qmin[i] += share * g.q_min / base
        qmax[i] += share * g.q_max / base
        vset[i] = g.v_set
    slack = net.slack
    is_pv = (kind == "pv") & has_gen
    is_pv[slack] = False

    if initial is not None:
        v0 = initial.v_mag * np.exp(1j * initial.v_ang)
    else:
        v0 = np.ones(n, dtype=complex)
    vm0 = np.abs(v0)
    vm0[is_pv] = vset[is_pv]
    if has_gen[slack]:
        vm0[slack] = vset[slack]
    v0 = vm0 * np.exp(1j * np.angle(v0))

    q_spec = np.zeros(n)
    transferred = np.zeros(n, dtype=bool)
    total_it = 0
    converged = False
    norm = np.inf
    v = v0
    for _ in range(max(1, settings.max_q_rounds)):
        pv = np.flatnonzero(is_pv)
        pq = np.flatnonzero(~is_pv & (np.arange(n) != slack))
        v, converged, it, norm = _newton(ybus, v, slack, pv, pq, p_gen_spec, q_spec,
                                         net.p0, net.q0, load_scale, load_model,
                                         transferred, settings)
        total_it += it
        if not converged or not settings.enforce_q_limits:
            break
        vm = np.abs(v)
        _, ql, _, _ = _loads(vm, net.p0, net.q0, load_scale, load_model, transferred)
        qg = (v * np.conj(ybus @ v)).imag + ql
        over = is_pv & (qg > qmax + 1e-9)
        under = is_pv & (qg < qmin - 1e-9)
        if not (over.any() or under.any()):
            break
        q_spec[over] = qmax[over]
        q_spec[under] = qmin[under]
        is_pv &= ~(over | under)
    return _finish(case, net, ybus, v, on, load_scale, outage, load_model, transferred,
                   converged, total_it, norm, has_gen, p_gen_spec, is_pv)


def _finish(case, net, ybus, v, on, scale, outage, model, transferred, converged, iters,
            norm, has_gen, p_gen_spec, is_pv) -> SystemState:
    base = case.base_mva
    vm = np.abs(v)
    f, t = net.f, net.t
    onf = np.asarray(on, dtype=float)
    i_f = (net.yff * v[f] + net.yft * v[t]) * onf
    i_t = (net.ytf * v[f] + net.ytt * v[t]) * onf
    s_f = v[f] * np.conj(i_f) * base
    s_t = v[t] * np.conj(i_t) * base
    pl, ql, _, _ = _loads(vm, net.p0, net.q0, scale, model, transferred)
    s_inj = v * np.conj(ybus @ v)
    p_gen = np.where(has_gen, (s_inj.real + pl), 0.0)
    # PV/PQ generators hold their scheduled active power; slack takes the rest
    p_gen = np.where(has_gen & (np.arange(len(v)) != net.slack), p_gen_spec, p_gen)
    p_gen[net.slack] = s_inj.real[net.slack] + pl[net.slack]
    q_gen = np.where(has_gen, s_inj.imag + ql, 0.0)
    q_gen[net.slack] = s_inj.imag[net.slack] + ql[net.slack]
    return SystemState(
        v_mag=vm, v_ang=np.angle(v),
        p_from=s_f.real, q_from=s_f.imag, p_to=s_t.real, q_to=s_t.imag,
        branch_s=np.abs(s_f),
        p_gen=p_gen * base, q_gen=q_gen * base, p_load=pl * base, q_load=ql * base,
        load_scale=scale, outage=outage, converged=bool(converged), iterations=iters,
        mismatch=float(norm), transferred=transferred.copy(), branch_in_service=onf > 0,
    )
