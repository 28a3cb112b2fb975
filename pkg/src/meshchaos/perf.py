"""Latency/throughput aggregation and anomaly counting over simulation traces."""

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from meshchaos.errors import InputError
from meshchaos.mesh_sim import Outcome

DEFAULT_WINDOW_MS = 1000
DEFAULT_KAPPA = 5.0
MAD_FLOOR_MS = 1.0


@dataclass(frozen=True)
class PerfSample:
    api: str
    response_ms: int
    timestamp: int
    exclusive_ms: int  # response time minus time spent waiting on downstream calls
    run: int = 0
    seq: int = 0


@dataclass(frozen=True)
class ThroughputWindow:
    api: str
    start: int
    end: int
    count: int


@dataclass(frozen=True)
class AnomalyVerdict:
    sample: PerfSample
    observed: bool
    real: bool


def collect(traces, window_ms=DEFAULT_WINDOW_MS):
    """One sample per completed (Ok) call and per-API completion counts per window.

    Runs are laid end to end on one clock so windows tile the whole session.
    """
    samples = []
    offset = 0
    for run, trace in enumerate(traces):
        children = {}
        for r in trace.records:
            if r.parent is not None:
                children.setdefault(r.parent, []).append(r)
        for r in trace.records:
            if r.outcome != Outcome.OK:
                continue
            waited = sum(c.duration for c in children.get(r.seq, ()))
            samples.append(
                PerfSample(r.callee, r.duration, offset + r.start, max(0, r.duration - waited), run, r.seq)
            )
        offset += trace.end_time
    windows = []
    if samples:
        horizon = offset
        apis = sorted({s.api for s in samples})
        ends = {a: np.array([s.timestamp + s.response_ms for s in samples if s.api == a]) for a in apis}
        n_win = max(1, -(-horizon // window_ms))
        for a in apis:
            counts = np.bincount(np.minimum(ends[a] // window_ms, n_win - 1), minlength=n_win)
            for w in range(n_win):
                windows.append(ThroughputWindow(a, w * window_ms, (w + 1) * window_ms, int(counts[w])))
    return samples, windows


class AnomalyClassifier(Protocol):
    def classify(self, samples, baseline): ...


class RobustDebounceClassifier:
    """Median + kappa * MAD threshold per API, debounced over consecutive samples.

    A sample is an observed anomaly when its latency exceeds the API's
    baseline median by more than ``kappa`` MADs (MAD floored at 1 ms). It is a
    real anomaly when at least ``min_run`` consecutive samples of that API are
    observed anomalies. By default the exclusive latency is used, so a caller
    slowed only by a slow callee is not blamed for it.
    """

    def __init__(self, kappa=DEFAULT_KAPPA, min_run=2, metric="exclusive", mad_floor=MAD_FLOOR_MS):
        if metric not in ("exclusive", "response"):
            raise InputError(f"unknown latency metric {metric!r}")
        self.kappa = kappa
        self.min_run = min_run
        self.metric = metric
        self.mad_floor = mad_floor

    def _value(self, s):
        return s.exclusive_ms if self.metric == "exclusive" else s.response_ms

    def classify(self, samples, baseline):
        ref = {}
        for s in baseline:
            ref.setdefault(s.api, []).append(self._value(s))
        limits = {}
        for api, vals in ref.items():
            vals = np.asarray(vals, dtype=np.float64)
            med = float(np.median(vals))
            mad = float(np.median(np.abs(vals - med)))
            limits[api] = med + self.kappa * max(mad, self.mad_floor)
        for s in samples:
            if s.api not in limits:
                raise InputError(f"no baseline samples for API {s.api!r}")

        verdict = {}
        by_api = {}
        for i, s in enumerate(samples):
            by_api.setdefault(s.api, []).append(i)
        for api, idxs in by_api.items():
            idxs = sorted(idxs, key=lambda i: (samples[i].timestamp, samples[i].run, samples[i].seq))
            flags = [self._value(samples[i]) > limits[api] for i in idxs]
            run_start = 0
            for j in range(len(idxs) + 1):
                if j == len(idxs) or not flags[j]:
                    real = j - run_start >= self.min_run
                    for m in range(run_start, j):
                        verdict[idxs[m]] = AnomalyVerdict(samples[idxs[m]], True, real)
                    if j < len(idxs):
                        verdict[idxs[j]] = AnomalyVerdict(samples[idxs[j]], False, False)
                    run_start = j + 1
        return [verdict[i] for i in range(len(samples))]


def filter_anomalies(samples, baseline, kappa=DEFAULT_KAPPA, classifier=None):
    """Verdicts for ``samples`` against per-API ``baseline`` samples."""
    classifier = classifier or RobustDebounceClassifier(kappa=kappa)
    return classifier.classify(samples, baseline)


def total_anomalies(verdicts):
    """Per-API real-anomaly counts and their sum."""
    per_api = {}
    for v in verdicts:
        per_api.setdefault(v.sample.api, 0)
        if v.real:
            per_api[v.sample.api] += 1
    return per_api, sum(per_api.values())


def suggest_load(profile, verdicts):
    """Advisory multipliers per load-profile edge, judged by anomalies of the callee.

    Double the multiplier where the callee showed no real anomaly; hold it
    otherwise. Nothing is applied here.
    """
    per_api, _ = total_anomalies(verdicts)
    out = []
    for edge, mult in sorted(profile.items()):
        callee = edge[1] if isinstance(edge, tuple) else edge
        if per_api.get(callee, 0) == 0:
            out.append({"edge": edge, "current": mult, "suggested": mult * 2, "action": "increase"})
        else:
            out.append({"edge": edge, "current": mult, "suggested": mult, "action": "hold"})
    return out


def quantiles(samples, qs=(0.5, 0.9, 0.99)):
    by_api = {}
    for s in samples:
        by_api.setdefault(s.api, []).append(s.response_ms)
    return {
        api: {f"p{int(q * 100)}": float(np.quantile(np.asarray(v, dtype=np.float64), q)) for q in qs}
        for api, v in sorted(by_api.items())
    }
