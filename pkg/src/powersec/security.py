"""Line-overload / voltage-deviation indices and the four-class security label."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .grid import NetworkCase
from .powerflow import SystemState

# Synthetic index assigned to states whose power flow diverged.
COLLAPSE_SI = 100.0

ALARM_LIMIT = 5.0
EMERGENCY1_LIMIT = 15.0


class SecurityClass(enum.IntEnum):
    """Ordered by severity."""

    NORMAL = 0
    ALARM = 1
    EMERGENCY1 = 2
    EMERGENCY2 = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "SecurityClass":
        return cls[text.strip().upper()]


# Row/column order of the published confusion matrix.
REPORT_ORDER = (SecurityClass.ALARM, SecurityClass.EMERGENCY1,
                SecurityClass.EMERGENCY2, SecurityClass.NORMAL)


@dataclass(frozen=True)
class SecurityWeights:
    w1: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or not self.w1 + self.w2 > 0:
            raise ValueError("weights must be non-negative with a positive sum")


@dataclass(frozen=True)
class SecurityScore:
    si: float
    loi_per_line: np.ndarray
    vdi_per_bus: np.ndarray
    class_label: SecurityClass


def line_overload_index(s_km: float, s_lim: float) -> float:
    """Overload in percent of the flow itself; zero up to and at the limit."""
    if s_km > s_lim:
        return (s_km - s_lim) / s_km * 100.0
    return 0.0


def voltage_deviation_index(u: float, u_min: float, u_max: float) -> float:
    """Percent excursion of ``u`` outside the closed band ``[u_min, u_max]``."""
    if u < u_min:
        return (u_min - u) / u_min * 100.0
    if u > u_max:
        return (u - u_max) / u_max * 100.0
    return 0.0


def line_overload_indices(s: np.ndarray, s_lim: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    over = s > s_lim
    out[over] = (s[over] - s_lim[over]) / s[over] * 100.0
    return out


def voltage_deviation_indices(u, u_min, u_max) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    low = np.where(u < u_min, (u_min - u) / u_min * 100.0, 0.0)
    high = np.where(u > u_max, (u - u_max) / u_max * 100.0, 0.0)
    return low + high


def classify(si: float) -> SecurityClass:
    if si < 0:
        raise ValueError("security index cannot be negative")
    if si == 0:
        return SecurityClass.NORMAL
    if si <= ALARM_LIMIT:
        return SecurityClass.ALARM
    if si <= EMERGENCY1_LIMIT:
        return SecurityClass.EMERGENCY1
    return SecurityClass.EMERGENCY2


def aggregate(loi, vdi, weights: SecurityWeights = SecurityWeights()) -> float:
    """Weighted mean of all line and bus indices."""
    loi = np.asarray(loi, dtype=float)
    vdi = np.asarray(vdi, dtype=float)
    n = loi.size + vdi.size
    return float((weights.w1 * loi.sum() + weights.w2 * vdi.sum()) / n)


def security_index(state: SystemState, case: NetworkCase,
                   weights: SecurityWeights = SecurityWeights()) -> SecurityScore:
    """Score a converged state; diverged states get :data:`COLLAPSE_SI`."""
    if not state.converged:
        return SecurityScore(COLLAPSE_SI, np.zeros(0), np.zeros(0), classify(COLLAPSE_SI))
    on = state.branch_in_service
    if on is None:
        on = np.array([br.in_service for br in case.branches])
    s_lim = np.array([br.s_lim for br in case.branches])
    loi = line_overload_indices(state.branch_s[on], s_lim[on])
    vdi = voltage_deviation_indices(state.v_mag,
                                    np.array([b.v_min for b in case.buses]),
                                    np.array([b.v_max for b in case.buses]))
    si = aggregate(loi, vdi, weights)
    return SecurityScore(si, loi, vdi, classify(si))
