"""Windowed change detection: three two-sample tests plus majority voting.

Each duty cycle the most recent six telemetry values (30 minutes) are
compared against the previous six. Welch's t-test targets mean shifts,
Mann-Whitney U rank shifts, and the two-sample Kolmogorov-Smirnov test
distribution-shape changes; an alert is raised when at least two of the
three reject at the configured significance level. With n=6 per side the
asymptotic tests are rough, so the rank tests use exact small-sample
p-values where the backend provides them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InvalidWindow
from .weather import CHANNELS, TelemetryRecord

WINDOW_LEN = 6
DUTY_CYCLE_S = 1800
DEFAULT_ALPHA = 0.05

TEST_NAMES = ("welch_t", "mann_whitney_u", "ks_2samp")

_ALERT_PREFIX = struct.Struct("<QBB")       # timestamp_us, vote, channel index
_ALERT_TEST = struct.Struct("<ddB")         # statistic, p_value, reject
ALERT_SIZE = _ALERT_PREFIX.size + 3 * _ALERT_TEST.size


@dataclass(frozen=True)
class StatTestResult:
    test_name: str
    statistic: float
    p_value: float
    reject: bool


@dataclass(frozen=True)
class Window:
    records: tuple[TelemetryRecord, ...]

    def __post_init__(self):
        if len(self.records) != WINDOW_LEN:
            raise InvalidWindow(f"window needs exactly {WINDOW_LEN} records, "
                                f"got {len(self.records)}")
        ts = [r.timestamp_us for r in self.records]
        gaps = {b - a for a, b in zip(ts, ts[1:])}
        if len(gaps) > 1 or (gaps and min(gaps) <= 0):
            raise InvalidWindow("window records are not evenly spaced")

    def start_us(self) -> int:
        return self.records[0].timestamp_us

    def end_us(self) -> int:
        return self.records[-1].timestamp_us

    def values(self, channel: str) -> np.ndarray:
        return np.array([r.value(channel) for r in self.records])


@dataclass(frozen=True)
class ChangeAlert:
    timestamp_us: int
    results: tuple[StatTestResult, StatTestResult, StatTestResult]
    vote: bool
    channel: str

    def pack(self) -> bytes:
        out = _ALERT_PREFIX.pack(self.timestamp_us, int(self.vote),
                                 CHANNELS.index(self.channel))
        for r in self.results:
            out += _ALERT_TEST.pack(r.statistic, r.p_value, int(r.reject))
        return out

    @classmethod
    def unpack(cls, raw: bytes) -> "ChangeAlert":
        ts, vote, channel_idx = _ALERT_PREFIX.unpack_from(raw)
        results = []
        for i, name in enumerate(TEST_NAMES):
            stat, p, reject = _ALERT_TEST.unpack_from(
                raw, _ALERT_PREFIX.size + i * _ALERT_TEST.size)
            results.append(StatTestResult(name, stat, p, bool(reject)))
        return cls(ts, tuple(results), bool(vote), CHANNELS[channel_idx])


def welch_t(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if np.var(x) == 0.0 and np.var(y) == 0.0:
        # degenerate: identical constants are indistinguishable, distinct
        # constants are maximally distinguishable
        return (0.0, 1.0) if np.mean(x) == np.mean(y) else (np.inf, 0.0)
    res = stats.ttest_ind(x, y, equal_var=False)
    return float(res.statistic), float(res.pvalue)


def mann_whitney_u(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    res = stats.mannwhitneyu(x, y, alternative="two-sided", method="auto")
    return float(res.statistic), float(res.pvalue)


def ks_2samp(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    res = stats.ks_2samp(x, y, method="exact")
    return float(res.statistic), float(res.pvalue)


_TESTS = {
    "welch_t": welch_t,
    "mann_whitney_u": mann_whitney_u,
    "ks_2samp": ks_2samp,
}


def majority_vote(rejects: tuple[bool, bool, bool]) -> bool:
    return sum(rejects) >= 2


def detect_change(current: Window, previous: Window, alpha: float = DEFAULT_ALPHA,
                  channel: str = "wind_speed") -> ChangeAlert:
    """Compare two non-overlapping windows on one channel; vote = majority."""
    if not (0.0 < alpha < 1.0):
        raise InvalidWindow(f"alpha must be in (0,1), got {alpha}")
    if previous.end_us() >= current.start_us():
        raise InvalidWindow("windows overlap or are out of order")
    x = current.values(channel)
    y = previous.values(channel)
    results = []
    for name in TEST_NAMES:
        statistic, p_value = _TESTS[name](x, y)
        results.append(StatTestResult(name, statistic, p_value, bool(p_value < alpha)))
    results = tuple(results)
    return ChangeAlert(current.end_us(), results,
                       majority_vote(tuple(r.reject for r in results)), channel)
