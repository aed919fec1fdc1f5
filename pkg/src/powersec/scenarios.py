"""Quasi-dynamic state database: proportional load ramp with random N-1 outages.

At each ramp step the intact network is solved first; every sampled outage is
then solved starting from that prefault solution.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import NO_OUTAGE, NetworkCase, Outage, is_connected
from .powerflow import LoadModel, SolverSettings, SystemState, solve

log = logging.getLogger(__name__)


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    scale_start: float = 1.0
    scale_end: float = 2.1
    scale_step: float = 0.02
    contingencies_per_step: int = 152
    master_seed: int = 20160601
    include_base_state: bool = True

    def __post_init__(self):
        if self.scale_start > self.scale_end:
            raise ValueError("scale_start must not exceed scale_end")
        if not self.scale_step > 0:
            raise ValueError("scale_step must be positive")
        if self.contingencies_per_step < 1:
            raise ValueError("contingencies_per_step must be >= 1")


@dataclass
class StateRecord:
    """``precollapse_state`` is set for diverged outages only: the last
    converged point on the way from the prefault state to the full outage."""

    state: SystemState
    prefault_state: SystemState
    scenario_id: int
    step: int = 0
    precollapse_state: SystemState | None = None

    @property
    def observed_state(self) -> SystemState:
        """State whose quantities describe the record."""
        if self.state.converged:
            return self.state
        return self.precollapse_state or self.prefault_state


def ramp_schedule(config: ScenarioConfig) -> list[float]:
    """Load multipliers from start to end inclusive; the last step is clipped."""
    start, end, step = config.scale_start, config.scale_end, config.scale_step
    n = int(np.floor((end - start) / step + 1e-9))
    out = [round(start + i * step, 12) for i in range(n + 1)]
    if end - out[-1] > 1e-9 * max(step, 1.0):
        out.append(end)
    return out


def removable_elements(case: NetworkCase) -> list[Outage]:
    slack = case.slack_index
    lines = [Outage("line", k) for k, br in enumerate(case.branches) if br.in_service]
    gens = [Outage("generator", k) for k, g in enumerate(case.generators)
            if g.in_service and case.bus_index(g.bus) != slack]
    return lines + gens


def _islands(case: NetworkCase, outage: Outage) -> bool:
    return outage.kind == "line" and not is_connected(case, removed_branch=outage.element_id)


def sample_contingencies(case: NetworkCase, count: int, seed) -> list[Outage]:
    """Draw ``count`` distinct outages uniformly from lines and non-slack
    generators. Outages that would island part of the network are skipped
    and replaced by the next draw; if the population runs out the shorter
    list is returned with a logged diagnostic."""
    pool = removable_elements(case)
    if count > len(pool):
        raise ValueError(f"requested {count} contingencies but only {len(pool)} "
                         "removable elements exist")
    rng = np.random.default_rng(seed)
    picked = []
    for i in rng.permutation(len(pool)):
        out = pool[i]
        if _islands(case, out):
            log.debug("skipping islanding outage %s", out.label())
            continue
        picked.append(out)
        if len(picked) == count:
            break
    if len(picked) < count:
        log.warning("only %d of %d requested contingencies avoid islanding",
                    len(picked), count)
    return picked


COLLAPSE_BISECTIONS = 6


def precollapse_state(case: NetworkCase, scale: float, outage: Outage, prefault: SystemState,
                      load_model: LoadModel, settings: SolverSettings) -> SystemState:
    """Bisect on the removed share of the outaged element and return the
    last converged state before the power flow stops converging."""
    lo, hi, best = 0.0, 1.0, prefault
    for _ in range(COLLAPSE_BISECTIONS):
        mid = 0.5 * (lo + hi)
        st = solve(case, scale, outage, load_model, settings, initial=best, outage_fraction=mid)
        if st.converged:
            lo, best = mid, st
        else:
            hi = mid
    return best


def step_seed(master_seed: int, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(step,))


def _run_step(args):
    case, scale, step, config, load_model, settings = args
    base = solve(case, scale, NO_OUTAGE, load_model, settings)
    if not base.converged:
        return step, base, []
    outages = sample_contingencies(case, config.contingencies_per_step,
                                   step_seed(config.master_seed, step))
    post = []
    for o in outages:
        st = solve(case, scale, o, load_model, settings, initial=base)
        pre = None if st.converged else precollapse_state(case, scale, o, base, load_model,
                                                           settings)
        post.append((st, pre))
    return step, base, post


def generate_states(case: NetworkCase, config: ScenarioConfig = ScenarioConfig(),
                    load_model: LoadModel = LoadModel(),
                    settings: SolverSettings = SolverSettings(),
                    workers: int = 1) -> list[StateRecord]:
    """Build the state database. Output is independent of ``workers``.

    The ramp stops at the first step whose intact network no longer
    converges; divergence at the first step is fatal.
    """
    schedule = ramp_schedule(config)
    jobs = [(case, s, i, config, load_model, settings) for i, s in enumerate(schedule)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_step, jobs, chunksize=1))
    else:
        results = [_run_step(j) for j in jobs]
    records: list[StateRecord] = []
    for step, base, post in results:
        if not base.converged:
            if step == 0:
                raise ScenarioError(
                    f"intact network diverges at the first ramp step (scale {schedule[0]})")
            log.warning("intact network diverges at scale %.4f; ramp truncated",
                        schedule[step])
            break
        if config.include_base_state:
            records.append(StateRecord(base, base, len(records), step))
        for st, pre in post:
            records.append(StateRecord(st, base, len(records), step, pre))
    return records


def _state_columns(case: NetworkCase) -> list[str]:
    cols = [f"VM_{b.id}" for b in case.buses] + [f"VA_{b.id}" for b in case.buses]
    for prefix in ("PF", "QF", "PT", "QT"):
        cols += [f"{prefix}_{br.name}_{k}" for k, br in enumerate(case.branches)]
    return cols


RAW_META = ["scenario_id", "step", "load_scale", "outage", "converged", "iterations"]


def write_state_csv(records: list[StateRecord], case: NetworkCase, path) -> None:
    """One row per record. Electrical columns of a diverged record
    (``converged`` = 0) hold its pre-collapse state."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_META + _state_columns(case))
        for rec in records:
            st = rec.state
            src = rec.observed_state
            vals = np.concatenate([src.v_mag, src.v_ang, src.p_from, src.q_from,
                                   src.p_to, src.q_to])
            w.writerow([rec.scenario_id, rec.step, repr(st.load_scale), st.outage.label(),
                        int(st.converged), st.iterations] + [repr(float(v)) for v in vals])
