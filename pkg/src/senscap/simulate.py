"""Monte Carlo validation: random sensor networks, encoding, noise, ML and BP decoding."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import logsumexp
from scipy.stats import binomtest

from .errors import (
    AlphabetViolation,
    ConfigError,
    InstanceTooLarge,
    NumericalUnderflow,
    RangeExceedsField,
)
from .models import ModelSpec
from .types import ENUMERATION_LIMIT, disk_stencil

DEFAULT_SEED = 20070501
BP_TOL = 1e-6
DEFAULT_DAMPING = 0.5   # undamped flooding oscillates on dense loopy graphs
LOG_FLOOR = -700.0   # stands in for log(0) so that 0 * log 0 stays finite


def thread_count() -> int:
    """Worker cap from SENSCAP_THREADS (default 1). Results never depend on it."""
    raw = os.environ.get("SENSCAP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SENSCAP_THREADS must be an integer, got {raw!r}",
                          field="SENSCAP_THREADS") from None


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(p), LOG_FLOOR)


@dataclass(frozen=True, eq=False)
class SensorNetwork:
    """One draw from the network ensemble.

    ``k`` is the vector length (the side length for 2D fields, which are
    flattened row-major).  ``connections[l]`` lists the flat target indices
    sensor l reads, in sensing-function argument order; ``sensor_class[l]``
    picks its class from ``model.classes()``.
    """

    model: ModelSpec
    k: int
    n: int
    connections: tuple
    sensor_class: np.ndarray
    seed: Optional[int] = None

    @property
    def n_targets(self) -> int:
        return self.k * self.k if self.model.discipline == "contiguous2d" else self.k

    @property
    def rate(self) -> float:
        return self.n_targets / self.n

    @cached_property
    def groups(self) -> list:
        """[(class, sensor indices, (n_g, arity) connection array)] per populated class."""
        out = []
        for g, cls in enumerate(self.model.classes()):
            idx = np.flatnonzero(self.sensor_class == g)
            if idx.size:
                conn = np.array([self.connections[i] for i in idx], dtype=np.int64)
                out.append((cls, idx, conn.reshape(idx.size, cls.psi.arity)))
        return out

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "rate": self.rate,
            "connections": [list(map(int, c)) for c in self.connections],
            "sensor_class": [int(c) for c in self.sensor_class],
        }


def generate_network(model: ModelSpec, k: int, n: int, seed=None) -> SensorNetwork:
    """Draw a network: uniform connections with replacement, or random contiguous windows."""
    if n < 1:
        raise ConfigError("need at least one sensor", field="n")
    if k < 1:
        raise ConfigError("need at least one target position", field="k")
    rng = np.random.default_rng(seed)
    classes = model.classes()
    if len(classes) > 1:
        alpha = np.array([c.alpha for c in classes])
        sensor_class = rng.choice(len(classes), size=n, p=alpha)
    else:
        sensor_class = np.zeros(n, dtype=np.int64)
    conns = [None] * n
    for g, cls in enumerate(classes):
        idx = np.flatnonzero(sensor_class == g)
        a = cls.psi.arity
        if model.discipline == "arbitrary":
            rows = rng.integers(0, k, size=(idx.size, a))
        elif model.discipline == "contiguous1d":
            if k < a:
                raise RangeExceedsField(f"window of {a} exceeds k={k}", field="k")
            start = rng.integers(0, k, size=idx.size)
            rows = (start[:, None] + np.arange(a)[None, :]) % k
        else:
            stencil = np.array(disk_stencil(cls.c))
            span = 2 * int(np.abs(stencil).max()) + 1
            if k < span:
                raise RangeExceedsField(f"stencil of width {span} exceeds field side {k}",
                                        field="k")
            cy = rng.integers(0, k, size=idx.size)
            cx = rng.integers(0, k, size=idx.size)
            rows = ((cy[:, None] + stencil[None, :, 0]) % k) * k + (cx[:, None] + stencil[None, :, 1]) % k
        for i, row in zip(idx, rows):
            conns[i] = tuple(int(x) for x in row)
    return SensorNetwork(model, k, n, tuple(conns), sensor_class,
                         seed if isinstance(seed, int) else None)


def network_from_connections(model: ModelSpec, k: int, connections) -> SensorNetwork:
    """Fixed network, e.g. a hand-drawn example; single-class models only."""
    conns = tuple(tuple(int(x) for x in c) for c in connections)
    for c in conns:
        if len(c) != model.psi.arity:
            raise ConfigError(f"sensor reads {len(c)} positions, Psi takes {model.psi.arity}",
                              field="connections")
        if min(c) < 0 or max(c) >= (k * k if model.discipline == "contiguous2d" else k):
            raise RangeExceedsField("connection index out of range", field="connections")
    return SensorNetwork(model, k, len(conns), conns, np.zeros(len(conns), dtype=np.int64))


# ---------------------------------------------------------------------------
# encoding and noise


def _check_vector(network: SensorNetwork, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64).ravel()
    if v.size != network.n_targets:
        raise AlphabetViolation(f"vector has length {v.size}, network has {network.n_targets}",
                                field="v")
    if v.size and (v.min() < 0 or v.max() >= network.model.alphabet_size):
        raise AlphabetViolation("symbol outside the target alphabet", field="v")
    return v


def _codes(vs: np.ndarray, conn: np.ndarray, V: int) -> np.ndarray:
    """Pattern index of every sensor's view, for a (B, k) batch of vectors -> (B, n_g)."""
    codes = np.zeros((vs.shape[0], conn.shape[0]), dtype=np.int64)
    for t in range(conn.shape[1]):
        codes = codes * V + vs[:, conn[:, t]]
    return codes


def encode(network: SensorNetwork, v) -> np.ndarray:
    """Noiseless codeword as output-alphabet indices (equal to Psi values for sums)."""
    v = _check_vector(network, v)
    x = np.zeros(network.n, dtype=np.int64)
    for cls, idx, conn in network.groups:
        x[idx] = cls.psi.index[_codes(v[None, :], conn, network.model.alphabet_size)[0]]
    return x


def codeword_values(network: SensorNetwork, x) -> np.ndarray:
    """Map output indices back to Psi values."""
    out = np.zeros(network.n)
    for cls, idx, _ in network.groups:
        out[idx] = cls.psi.alphabet[np.asarray(x)[idx]]
    return out


def observe(network: SensorNetwork, x, seed=None) -> np.ndarray:
    """Pass each x_l independently through its sensor's noise channel."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.int64)
    y = np.zeros(network.n, dtype=np.int64)
    u = rng.random(network.n)
    for cls, idx, _ in network.groups:
        cdf = np.cumsum(cls.noise.matrix, axis=1)
        rows = cdf[x[idx]]
        y[idx] = np.minimum((u[idx, None] >= rows).sum(axis=1), rows.shape[1] - 1)
    return y


# ---------------------------------------------------------------------------
# decoding


def log_likelihoods(network: SensorNetwork, y, vs: np.ndarray) -> np.ndarray:
    """log P(y | v) (+ log prior when the model has one) for a (B, k) batch."""
    V = network.model.alphabet_size
    y = np.asarray(y, dtype=np.int64)
    total = np.zeros(vs.shape[0])
    for cls, idx, conn in network.groups:
        logW = _log(cls.noise.matrix)
        x = cls.psi.index[_codes(vs, conn, V)]
        total += logW[x, y[idx][None, :]].sum(axis=1)
    if network.model.prior is not None:
        total += _log(network.model.prior_or_uniform())[vs].sum(axis=1)
    return total


def _candidates(start: int, stop: int, k: int, V: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.int64)
    powers = V ** np.arange(k - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % V


def decode_ml(network: SensorNetwork, y, chunk: int = 1 << 15, tie_tol: float = 1e-9):
    """Exhaustive ML (MAP with a prior) decoding; ties go to the lexicographically smallest."""
    k = network.n_targets
    V = network.model.alphabet_size
    if k > ENUMERATION_LIMIT or V ** k > V ** ENUMERATION_LIMIT:
        raise InstanceTooLarge(f"exhaustive decoding limited to k <= {ENUMERATION_LIMIT}",
                               field="k")
    best, best_idx = -np.inf, 0
    for start in range(0, V ** k, chunk):
        stop = min(start + chunk, V ** k)
        ll = log_likelihoods(network, y, _candidates(start, stop, k, V))
        i = int(np.argmax(ll))
        if ll[i] > best + tie_tol:
            best, best_idx = float(ll[i]), start + i
    return _candidates(best_idx, best_idx + 1, k, V)[0]


def exact_posterior_marginals(network: SensorNetwork, y, chunk: int = 1 << 15) -> np.ndarray:
    """Per-position posterior marginals by full enumeration; (k, V)."""
    k = network.n_targets
    V = network.model.alphabet_size
    if k > ENUMERATION_LIMIT:
        raise InstanceTooLarge(f"enumeration limited to k <= {ENUMERATION_LIMIT}", field="k")
    chunks = []
    for start in range(0, V ** k, chunk):
        stop = min(start + chunk, V ** k)
        vs = _candidates(start, stop, k, V)
        chunks.append((vs, log_likelihoods(network, y, vs)))
    norm = logsumexp(np.concatenate([c[1] for c in chunks]))
    marg = np.zeros((k, V))
    for vs, ll in chunks:
        w = np.exp(ll - norm)
        for a in range(V):
            marg[:, a] += ((vs == a) * w[:, None]).sum(axis=0)
    return marg


@dataclass
class FactorGraph:
    """Bipartite graph of k variables and n sensor factors with log-domain tables.

    ``tables[g]`` has shape (n_g,) + (V,) * arity and holds log W(y_l | Psi(pattern)).
    """

    k: int
    V: int
    groups: list            # [(factor indices, connection array, log table)]
    log_prior: Optional[np.ndarray] = None

    @classmethod
    def from_network(cls, network: SensorNetwork, y) -> "FactorGraph":
        y = np.asarray(y, dtype=np.int64)
        V = network.model.alphabet_size
        groups = []
        for sc, idx, conn in network.groups:
            logW = _log(sc.noise.matrix)
            table = logW[sc.psi.index[None, :], y[idx][:, None]]
            groups.append((idx, conn, table.reshape((idx.size,) + (V,) * conn.shape[1])))
        prior = None
        if network.model.prior is not None:
            prior = _log(network.model.prior_or_uniform())
        return cls(network.n_targets, V, groups, prior)


@dataclass
class BPResult:
    v_hat: np.ndarray
    marginals: np.ndarray
    converged: bool
    iterations: int


def _normalize(m: np.ndarray) -> np.ndarray:
    return m - logsumexp(m, axis=-1, keepdims=True)


def decode_bp(graph: FactorGraph, y=None, max_iters: int = 50, damping: float = 0.0) -> BPResult:
    """Loopy sum-product on ``graph`` with a synchronous flooding schedule, in log domain.

    ``y`` is accepted for call-site symmetry with ``decode_ml``; the
    observation is already folded into the factor tables.
    """
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1", field="max_iters")
    if not 0.0 <= damping < 1.0:
        raise ConfigError("damping must lie in [0, 1)", field="damping")
    k, V = graph.k, graph.V
    unary = np.zeros((k, V)) if graph.log_prior is None else np.tile(graph.log_prior, (k, 1))
    # one message per edge, indexed [group][factor, slot, value]
    f2v = [np.full((conn.shape[0], conn.shape[1], V), -math.log(V)) for _, conn, _ in graph.groups]
    converged, it = False, 0
    for it in range(1, max_iters + 1):
        belief = unary.copy()
        for (_, conn, _), m in zip(graph.groups, f2v):
            np.add.at(belief, conn.ravel(), m.reshape(-1, V))
        delta = 0.0
        new_f2v = []
        for (_, conn, table), m in zip(graph.groups, f2v):
            a = conn.shape[1]
            v2f = _normalize(belief[conn] - m)                     # (n_g, a, V)
            total = table.copy()
            for t in range(a):
                shape = [-1] + [1] * a
                shape[1 + t] = V
                total = total + v2f[:, t, :].reshape(shape)
            out = np.empty_like(m)
            for t in range(a):
                axes = tuple(1 + s for s in range(a) if s != t)
                out[:, t, :] = logsumexp(total, axis=axes) - v2f[:, t, :] if axes else \
                    total - v2f[:, t, :]
            out = _normalize(out)
            if damping:
                out = _normalize(np.logaddexp(math.log1p(-damping) + out, math.log(damping) + m))
            if not np.all(np.isfinite(out)):
                raise NumericalUnderflow("non-finite BP message", {"iteration": it})
            delta = max(delta, float(np.max(np.abs(np.exp(out) - np.exp(m)))) if out.size else 0.0)
            new_f2v.append(out)
        f2v = new_f2v
        if delta < BP_TOL:
            converged = True
            break
    belief = unary.copy()
    for (_, conn, _), m in zip(graph.groups, f2v):
        np.add.at(belief, conn.ravel(), m.reshape(-1, V))
    marg = np.exp(_normalize(belief))
    return BPResult(np.argmax(marg, axis=1), marg, converged, it)


# ---------------------------------------------------------------------------
# trials


@dataclass(eq=False)
class TrialRecord:
    seed: list
    v: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v_hat: np.ndarray
    distortion: float
    error: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "v": self.v.tolist(),
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "v_hat": self.v_hat.tolist(),
            "distortion": self.distortion,
            "error": self.error,
            "meta": self.meta,
        }


@dataclass(eq=False)
class TrialSummary:
    k: int
    n: int
    rate: float
    errors: int
    trials: int
    ci_low: float
    ci_high: float
    records: list = field(default_factory=list)

    @property
    def error_rate(self) -> float:
        return self.errors / self.trials

    def row(self) -> dict:
        return {"k": self.k, "n": self.n, "rate": self.rate, "error_rate": self.error_rate,
                "ci_low": self.ci_low, "ci_high": self.ci_high, "trials": self.trials}


def wilson_interval(errors: int, trials: int, confidence: float = 0.95):
    ci = binomtest(errors, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _draw_vector(model: ModelSpec, size: int, rng) -> np.ndarray:
    if model.prior is None:
        return rng.integers(0, model.alphabet_size, size=size)
    return rng.choice(model.alphabet_size, size=size, p=model.prior_or_uniform())


def _one_trial(model, k, n, D, decoder, bp_iters, damping, master, key):
    ss = np.random.SeedSequence(master, spawn_key=key)
    net_ss, v_ss, y_ss = ss.spawn(3)
    net = generate_network(model, k, n, net_ss)
    v = _draw_vector(model, net.n_targets, np.random.default_rng(v_ss))
    x = encode(net, v)
    y = observe(net, x, y_ss)
    meta = {"decoder": decoder}
    if decoder == "ml":
        v_hat = decode_ml(net, y)
    else:
        res = decode_bp(FactorGraph.from_network(net, y), y, bp_iters, damping)
        v_hat = res.v_hat
        meta.update(iterations=res.iterations, converged=res.converged)
    dist = float(np.mean(v_hat != v))
    return TrialRecord([int(master), *map(int, key)], v, x, y, v_hat, dist, dist >= D, meta)


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_trials(model: ModelSpec, k: int, n: int, D: float, trials: int, seed=DEFAULT_SEED,
               decoder: str = "bp", bp_iters: int = 50, damping: float = DEFAULT_DAMPING,
               keep_records: bool = True, threads: Optional[int] = None) -> TrialSummary:
    """Error rate over ``trials`` fresh networks; error means distortion >= D."""
    if trials < 1:
        raise ConfigError("trials must be >= 1", field="trials")
    if not 0.0 <= D <= 1.0:
        raise ConfigError("distortion must lie in [0, 1]", field="D")
    if decoder not in ("bp", "ml"):
        raise ConfigError(f"unknown decoder {decoder!r}", field="decoder")
    threads = threads or thread_count()

    def job(i):
        return _one_trial(model, k, n, D, decoder, bp_iters, damping, seed, (k, n, i))

    records = _map(job, range(trials), threads)
    errors = sum(r.error for r in records)
    lo, hi = wilson_interval(errors, trials)
    rate = (k * k if model.discipline == "contiguous2d" else k) / n
    return TrialSummary(k, n, rate, errors, trials, lo, hi, records if keep_records else [])


def sensors_for_rate(model: ModelSpec, k: int, rate: float) -> int:
    targets = k * k if model.discipline == "contiguous2d" else k
    if rate <= 0:
        raise ConfigError("rate must be positive", field="rates")
    return max(1, int(round(targets / rate)))


@dataclass(eq=False)
class RateCurve:
    k: int
    points: list       # TrialSummary per rate, ascending in rate

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def error_rates(self) -> np.ndarray:
        return np.array([p.error_rate for p in self.points])

    def isotonic_fit(self) -> np.ndarray:
        w = np.array([p.trials for p in self.points], dtype=float)
        return isotonic_regression(self.error_rates, weights=w, increasing=True).x

    def is_monotone(self) -> bool:
        """True when the nondecreasing fit stays inside every point's Wilson interval."""
        fit = self.isotonic_fit()
        lo = np.array([p.ci_low for p in self.points])
        hi = np.array([p.ci_high for p in self.points])
        return bool(np.all((fit >= lo - 1e-12) & (fit <= hi + 1e-12)))

    def crossing(self, level: float) -> float:
        """Rate where the isotonic fit first reaches ``level``; nan if it never does."""
        fit, rates = self.isotonic_fit(), self.rates
        above = np.flatnonzero(fit >= level)
        if above.size == 0:
            return float("nan")
        j = int(above[0])
        if j == 0:
            return float(rates[0])
        f0, f1 = fit[j - 1], fit[j]
        return float(rates[j - 1] + (level - f0) / (f1 - f0) * (rates[j] - rates[j - 1]))

    def transition_width(self, low: float = 0.2, high: float = 0.8) -> float:
        return self.crossing(high) - self.crossing(low)


def sweep_rate(model: ModelSpec, k_list, rates, D: float, trials: int, seed=DEFAULT_SEED,
               decoder: str = "bp", bp_iters: int = 50, damping: float = DEFAULT_DAMPING,
               keep_records: bool = False, on_point=None) -> list:
    """One RateCurve per k; ``on_point(summary)`` streams points as they finish."""
    if not len(rates):
        raise ConfigError("rate grid is empty", field="rates")
    curves = []
    for k in k_list:
        ns = sorted({sensors_for_rate(model, k, r) for r in rates}, reverse=True)
        points = []
        for n in ns:
            summary = run_trials(model, k, n, D, trials, seed, decoder, bp_iters, damping,
                                 keep_records)
            points.append(summary)
            if on_point is not None:
                on_point(summary)
        curves.append(RateCurve(k, points))
    return curves


__all__ = [
    "SensorNetwork", "TrialRecord", "TrialSummary", "FactorGraph", "BPResult", "RateCurve",
    "generate_network", "network_from_connections", "encode", "observe", "decode_ml",
    "decode_bp", "exact_posterior_marginals", "log_likelihoods", "run_trials", "sweep_rate",
    "wilson_interval", "sensors_for_rate", "thread_count", "DEFAULT_SEED", "DEFAULT_DAMPING",
]
