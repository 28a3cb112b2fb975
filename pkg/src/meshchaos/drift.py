"""Sequential drift detection over API call streams with plug-in Bayes factors.

Two models of a call sequence are supported:

* ``multinomial`` - calls are independent draws from one categorical
  distribution over the APIs (order is ignored);
* ``markov`` - consecutive calls are edges of a first-order chain whose
  transition matrix has one Dirichlet-distributed row per API.

The baseline fit gives the prior Dirichlet counts and their mean, which is
frozen. A monitor then adds live observations to the counts; its log Bayes
factor is the log-likelihood of all live data at the posterior mean minus the
log-likelihood at the frozen prior mean.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from meshchaos import kernels
from meshchaos.errors import InputError

DEFAULT_ALPHA = 1.0
DEFAULT_THRESHOLD = 10.0


class ModelKind(str, Enum):
    MULTINOMIAL = "multinomial"
    MARKOV = "markov"


class Decision(str, Enum):
    NO_DRIFT = "NoDrift"
    DRIFT = "Drift"


@dataclass(frozen=True)
class DriftModel:
    """Dirichlet counts (a vector, or one row per API) over a fixed API alphabet."""

    kind: ModelKind
    apis: tuple
    counts: np.ndarray
    alpha: float = DEFAULT_ALPHA

    @property
    def k(self):
        return len(self.apis)

    def index(self):
        return {a: i for i, a in enumerate(self.apis)}

    def point_estimate(self):
        """Posterior mean of each Dirichlet (rows sum to one)."""
        if self.kind == ModelKind.MULTINOMIAL:
            return self.counts / self.counts.sum()
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    def concentration(self):
        """Total Dirichlet mass per row (per model for the multinomial kind)."""
        if self.kind == ModelKind.MULTINOMIAL:
            return np.array([self.counts.sum()])
        return self.counts.sum(axis=1)


def encode(sequence, apis):
    index = {a: i for i, a in enumerate(apis)}
    try:
        return np.array([index[a] for a in sequence], dtype=np.int64)
    except KeyError as exc:
        raise InputError(f"unknown API id {exc.args[0]!r}") from None


def tally(codes, kind, k):
    if kind == ModelKind.MULTINOMIAL:
        return kernels.symbol_counts(codes, k)
    return kernels.transition_counts(codes, k)


def fit_baseline(sequences, kind, alpha=DEFAULT_ALPHA, apis=None):
    """Add-``alpha`` smoothed tallies of the baseline sequences.

    ``apis`` fixes the alphabet (and so ``k``); by default it is every API seen
    in the baseline, sorted. Markov transitions never cross sequence borders.
    """
    kind = ModelKind(kind)
    if alpha <= 0:
        raise InputError(f"smoothing alpha must be > 0, got {alpha}")
    sequences = [list(s) for s in sequences]
    total = sum(len(s) for s in sequences)
    if total < 1:
        raise InputError("baseline has no observations")
    if apis is None:
        apis = sorted({a for s in sequences for a in s})
    apis = tuple(apis)
    k = len(apis)
    shape = (k,) if kind == ModelKind.MULTINOMIAL else (k, k)
    counts = np.full(shape, float(alpha))
    for s in sequences:
        counts += tally(encode(s, apis), kind, k)
    return DriftModel(kind, apis, counts, float(alpha))


def log_likelihood(estimate, sequence, kind):
    """Log-likelihood of an index sequence under a point estimate.

    Multinomial: sum of log theta over every call. Markov: sum of log T[i, j]
    over consecutive pairs; the first call contributes nothing.
    """
    kind = ModelKind(kind)
    estimate = np.asarray(estimate, dtype=np.float64)
    codes = np.asarray(sequence, dtype=np.int64)
    k = estimate.shape[0]
    if codes.size and (codes.min() < 0 or codes.max() >= k):
        raise InputError("sequence symbol outside the model alphabet")
    return _loglik_from_counts(estimate, tally(codes, kind, k))


def _loglik_from_counts(estimate, counts):
    used = counts > 0
    if np.any(estimate[used] <= 0):
        raise InputError("observed symbol has zero probability under the estimate")
    return float(np.sum(counts[used] * np.log(estimate[used])))


@dataclass
class BfMonitor:
    """Sequential plug-in Bayes-factor monitor; a Drift decision latches."""

    baseline: DriftModel
    threshold: float = DEFAULT_THRESHOLD
    prior_estimate: np.ndarray = field(init=False)
    data_counts: np.ndarray = field(init=False)
    n_observed: int = 0
    last: int = None  # last symbol seen, so Markov pairs span batch borders
    log_bf: float = 0.0
    latched: bool = False
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.prior_estimate = self.baseline.point_estimate()
        self.data_counts = np.zeros_like(self.baseline.counts)

    @property
    def bayes_factor(self):
        return float(np.exp(self.log_bf))

    def posterior(self):
        return DriftModel(self.baseline.kind, self.baseline.apis, self.baseline.counts + self.data_counts, self.baseline.alpha)


def new_monitor(baseline, threshold=DEFAULT_THRESHOLD):
    return BfMonitor(baseline, threshold)


def observe(monitor, batch):
    """Fold a batch of API ids into ``monitor`` and recompute its log Bayes factor."""
    batch = list(batch)
    if not batch:
        raise InputError("observation batch is empty")
    base = monitor.baseline
    codes = encode(batch, base.apis)
    if base.kind == ModelKind.MARKOV and monitor.last is not None:
        codes_for_pairs = np.concatenate([[monitor.last], codes])
    else:
        codes_for_pairs = codes
    monitor.data_counts = monitor.data_counts + tally(codes_for_pairs, base.kind, base.k)
    monitor.last = int(codes[-1])
    monitor.n_observed += len(codes)
    post = monitor.posterior().point_estimate()
    monitor.log_bf = _loglik_from_counts(post, monitor.data_counts) - _loglik_from_counts(
        monitor.prior_estimate, monitor.data_counts
    )
    if monitor.bayes_factor >= monitor.threshold:
        monitor.latched = True
    monitor.history.append((monitor.n_observed, monitor.log_bf, decide(monitor)))
    return monitor


def decide(monitor):
    return Decision.DRIFT if monitor.latched else Decision.NO_DRIFT


def read_call_log(path):
    """One API id per line; blank lines and ``#`` comments are skipped."""
    out = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def monitor_stream(baseline, stream, batch_size, threshold=DEFAULT_THRESHOLD):
    """Feed ``stream`` in batches; one (observations, log BF, decision) row per batch."""
    if batch_size < 1:
        raise InputError("batch size must be >= 1")
    mon = new_monitor(baseline, threshold)
    for start in range(0, len(stream), batch_size):
        observe(mon, stream[start : start + batch_size])
    return mon
