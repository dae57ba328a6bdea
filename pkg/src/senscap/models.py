"""Sensing functions, noise channels and the single-sensor laws they induce.

For a target vector of type gamma a randomly placed sensor produces ideal
output X with law ``output_dist``; for a pair of vectors at joint type lambda
the two ideal outputs have joint law ``joint_output_dist``.  ``pxy``/``qxy``
attach the noisy observation Y.
"""

from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, InvalidProbability, NoMixture, OrderMismatch
from .types import JointType, TypeHistogram, disk_stencil, kl

MERGE_TOL = 1e-9
DEFAULT_DECAY = 10.0
DISCIPLINES = ("arbitrary", "contiguous1d", "contiguous2d")


@dataclass(frozen=True)
class SensingFunction:
    """Deterministic map Psi from ``arity`` sensed symbols to an output symbol.

    ``values[i]`` is Psi of pattern i (normative pattern order); ``alphabet``
    is the sorted image and ``index[i]`` the position of ``values[i]`` in it.
    """

    kind: str
    arity: int
    alphabet_size: int = 2
    weights: Optional[tuple] = None
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.arity < 1:
            raise ConfigError("sensor range must be >= 1", field="c")
        if self.kind == "weighted_sum":
            if self.weights is None or len(self.weights) != self.arity:
                raise ConfigError(f"weighted_sum needs {self.arity} weights", field="psi.weights")
        elif self.kind == "lookup":
            if self.table is None or len(self.table) != self.alphabet_size ** self.arity:
                raise ConfigError(
                    f"lookup table needs {self.alphabet_size ** self.arity} entries",
                    field="psi.table")
        elif self.kind != "sum":
            raise ConfigError(f"unknown sensing function kind {self.kind!r}", field="psi.kind")

    @functools.cached_property
    def patterns(self) -> np.ndarray:
        return np.array(list(itertools.product(range(self.alphabet_size), repeat=self.arity)),
                        dtype=np.int64).reshape(-1, self.arity)

    @functools.cached_property
    def values(self) -> np.ndarray:
        if self.kind == "sum":
            return self.patterns.sum(axis=1).astype(float)
        if self.kind == "weighted_sum":
            return self.patterns @ np.asarray(self.weights, dtype=float)
        return np.asarray(self.table, dtype=float)

    @functools.cached_property
    def _merged(self):
        order = np.argsort(self.values, kind="stable")
        alphabet = []
        index = np.empty(self.values.size, dtype=np.int64)
        for i in order:
            val = self.values[i]
            if not alphabet or val - alphabet[-1] > MERGE_TOL:
                alphabet.append(float(val))
            index[i] = len(alphabet) - 1
        return np.array(alphabet), index

    @property
    def alphabet(self) -> np.ndarray:
        return self._merged[0]

    @property
    def index(self) -> np.ndarray:
        return self._merged[1]

    @property
    def n_outputs(self) -> int:
        return self.alphabet.size

    def __call__(self, symbols) -> float:
        code = 0
        for s in symbols:
            code = code * self.alphabet_size + int(s)
        return float(self.alphabet[self.index[code]])

    def to_dict(self) -> dict:
        doc = {"kind": self.kind}
        if self.weights is not None:
            doc["weights"] = list(self.weights)
        if self.table is not None:
            doc["table"] = list(self.table)
        return doc


@dataclass(frozen=True, eq=False)
class NoiseChannel:
    """Row-stochastic P(Y|X) over the sensor's output alphabet (Y = X)."""

    matrix: np.ndarray
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.asarray(self.matrix, dtype=float)
        if W.ndim != 2:
            raise ConfigError("noise matrix must be 2D", field="noise.rows")
        if np.any(W < 0) or np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidProbability("noise rows must be pmfs", field="noise.rows")
        W.setflags(write=False)
        object.__setattr__(self, "matrix", W)

    @property
    def n_inputs(self) -> int:
        return self.matrix.shape[0]

    def error_probability(self) -> np.ndarray:
        return 1.0 - np.diag(self.matrix)

    def to_dict(self) -> dict:
        if self.description:
            return dict(self.description)
        return {"kind": "matrix", "rows": self.matrix.tolist()}


def make_exponential_noise(p: float, alphabet, decay: float = DEFAULT_DECAY) -> NoiseChannel:
    """Counting-error channel: P(Y != X) = p, off-diagonal mass decaying as decay^-|rank gap|.

    ``alphabet`` is either the output alphabet (ranks are positions in sorted
    order) or its size.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidProbability(f"error probability must lie in [0, 1), got {p}", field="noise.p")
    if decay <= 0:
        raise InvalidProbability("decay base must be positive", field="noise.decay")
    m = alphabet if isinstance(alphabet, (int, np.integer)) else len(alphabet)
    if m == 1 and p > 0:
        raise InvalidProbability("a single-output sensor cannot err", field="noise.p")
    ranks = np.arange(m)
    gap = np.abs(ranks[:, None] - ranks[None, :])
    off = np.where(gap > 0, float(decay) ** (-gap.astype(float)), 0.0)
    W = np.eye(m) * (1.0 - p)
    if m > 1:
        W += p * off / off.sum(axis=1, keepdims=True)
    return NoiseChannel(W, {"kind": "exponential", "p": float(p), "decay": float(decay)})


@dataclass(frozen=True, eq=False)
class SensorClass:
    """One class of sensor: relative frequency, range, Psi and noise."""

    alpha: float
    c: int
    psi: SensingFunction
    noise: NoiseChannel


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Everything that defines a sensor-network ensemble.

    ``c`` is the sensor range: the number of sensed positions for the 1D
    disciplines and the Euclidean stencil radius for ``contiguous2d``.
    """

    discipline: str
    c: int
    psi: SensingFunction
    noise: NoiseChannel
    alphabet_size: int = 2
    prior: Optional[tuple] = None
    mixture: Optional[tuple] = None

    def __post_init__(self):
        if self.discipline not in DISCIPLINES:
            raise ConfigError(f"unknown discipline {self.discipline!r}", field="discipline")
        if self.prior is not None:
            pv = np.asarray(self.prior, float)
            if pv.size != self.alphabet_size or np.any(pv < 0) or abs(pv.sum() - 1) > 1e-12:
                raise InvalidProbability("prior must be a pmf over the alphabet", field="prior")
        for cls in self.classes():
            if cls.noise.n_inputs != cls.psi.n_outputs:
                raise ConfigError(
                    f"noise has {cls.noise.n_inputs} inputs but Psi has {cls.psi.n_outputs} outputs",
                    field="noise")
        if self.mixture is not None:
            total = sum(cls.alpha for cls in self.mixture)
            if abs(total - 1.0) > 1e-12 or any(cls.alpha < 0 for cls in self.mixture):
                raise InvalidProbability("mixture weights must sum to 1", field="mixture")

    @property
    def stencil(self) -> Optional[tuple]:
        if self.discipline == "contiguous2d":
            return disk_stencil(self.c)
        return None

    @property
    def arity(self) -> int:
        """Number of target positions a sensor reads."""
        return self.psi.arity

    @property
    def type_order(self) -> int:
        """Order of the (joint) types the model's distributions are functions of."""
        if self.discipline == "arbitrary":
            return 1
        return max(cls.psi.arity for cls in self.classes())

    def classes(self) -> tuple:
        if self.mixture:
            return self.mixture
        return (SensorClass(1.0, self.c, self.psi, self.noise),)

    def prior_or_uniform(self) -> np.ndarray:
        if self.prior is None:
            return np.full(self.alphabet_size, 1.0 / self.alphabet_size)
        return np.asarray(self.prior, float)

    def with_noise_p(self, p: float) -> "ModelSpec":
        """Same model with every exponential noise channel set to error probability p."""
        def renoise(noise, psi):
            desc = noise.description
            if desc.get("kind") != "exponential":
                raise ConfigError("noise sweeps need an exponential noise model", field="noise")
            return make_exponential_noise(p, psi.n_outputs, desc["decay"])

        mixture = None
        if self.mixture:
            mixture = tuple(SensorClass(m.alpha, m.c, m.psi, renoise(m.noise, m.psi))
                            for m in self.mixture)
        return ModelSpec(self.discipline, self.c, self.psi, renoise(self.noise, self.psi),
                         self.alphabet_size, self.prior, mixture)

    def to_dict(self) -> dict:
        doc = {
            "discipline": self.discipline,
            "c": self.c,
            "alphabet": self.alphabet_size,
            "psi": self.psi.to_dict(),
            "noise": self.noise.to_dict(),
            "prior": list(self.prior) if self.prior is not None else None,
            "mixture": None,
        }
        if self.mixture:
            doc["mixture"] = [
                {"alpha": m.alpha, "c": m.c, "psi": m.psi.to_dict(), "noise": m.noise.to_dict()}
                for m in self.mixture
            ]
        return doc


def _arity(discipline: str, c: int) -> int:
    if discipline == "contiguous2d":
        return len(disk_stencil(c))
    return c


def _psi_from_doc(doc: dict, arity: int, V: int) -> SensingFunction:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError("psi must be an object with a 'kind'", field="psi")
    table = doc.get("table")
    if isinstance(table, dict):
        flat = [None] * (V ** arity)
        for pattern, out in table.items():
            flat[int(pattern, V)] = out
        if any(x is None for x in flat):
            raise ConfigError("lookup table is not total", field="psi.table")
        table = flat
    weights = doc.get("weights")
    return SensingFunction(doc["kind"], arity, V,
                           tuple(float(w) for w in weights) if weights is not None else None,
                           tuple(float(t) for t in table) if table is not None else None)


def _noise_from_doc(doc: dict, psi: SensingFunction) -> NoiseChannel:
    if not isinstance(doc, dict):
        raise ConfigError("noise must be an object", field="noise")
    kind = doc.get("kind")
    if kind == "exponential":
        if "p" not in doc:
            raise ConfigError("exponential noise needs 'p'", field="noise.p")
        return make_exponential_noise(float(doc["p"]), psi.n_outputs,
                                      float(doc.get("decay", DEFAULT_DECAY)))
    if kind == "matrix":
        return NoiseChannel(np.asarray(doc["rows"], dtype=float))
    raise ConfigError(f"unknown noise kind {kind!r}", field="noise.kind")


def model_from_dict(doc: dict) -> ModelSpec:
    """Build a ModelSpec from the JSON model-spec document."""
    if not isinstance(doc, dict):
        raise ConfigError("model spec must be a JSON object")
    try:
        discipline = doc["discipline"]
        c = int(doc["c"])
    except KeyError as exc:
        raise ConfigError(f"missing field {exc.args[0]!r}", field=exc.args[0]) from None
    V = int(doc.get("alphabet", 2))
    if "psi" not in doc or "noise" not in doc:
        if not doc.get("mixture"):
            raise ConfigError("model needs 'psi' and 'noise'", field="psi")
    mixture = None
    if doc.get("mixture"):
        classes = []
        for i, entry in enumerate(doc["mixture"]):
            try:
                cl = int(entry.get("c", c))
                psi_l = _psi_from_doc(entry["psi"], _arity(discipline, cl), V)
                classes.append(SensorClass(float(entry["alpha"]), cl, psi_l,
                                           _noise_from_doc(entry["noise"], psi_l)))
            except KeyError as exc:
                raise ConfigError(f"mixture[{i}] missing {exc.args[0]!r}",
                                  field=f"mixture[{i}].{exc.args[0]}") from None
        mixture = tuple(classes)
    if "psi" in doc:
        psi = _psi_from_doc(doc["psi"], _arity(discipline, c), V)
        noise = _noise_from_doc(doc["noise"], psi)
    else:
        psi, noise = mixture[0].psi, mixture[0].noise
    prior = doc.get("prior")
    return ModelSpec(discipline, c, psi, noise, V,
                     tuple(float(x) for x in prior) if prior is not None else None, mixture)


def load_model(path) -> ModelSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"model file {path} not found", field="model") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {path} is not valid JSON: {exc}", field="model") from None
    return model_from_dict(doc)


def simple_model(c: int, p: float, discipline: str = "arbitrary", weights=None,
                 decay: float = DEFAULT_DECAY, alphabet_size: int = 2, prior=None) -> ModelSpec:
    """Convenience constructor for the sum / weighted-sum counting sensors."""
    arity = _arity(discipline, c)
    if weights is None:
        psi = SensingFunction("sum", arity, alphabet_size)
    else:
        psi = SensingFunction("weighted_sum", arity, alphabet_size, tuple(float(w) for w in weights))
    noise = make_exponential_noise(p, psi.n_outputs, decay)
    return ModelSpec(discipline, c, psi, noise, alphabet_size,
                     tuple(prior) if prior is not None else None)


# ---------------------------------------------------------------------------
# induced distributions


def _power(vectors: np.ndarray, c: int) -> np.ndarray:
    """Row-wise c-fold Kronecker power of a batch of pmfs."""
    out = vectors
    for _ in range(c - 1):
        out = (out[:, :, None] * vectors[:, None, :]).reshape(vectors.shape[0], -1)
    return out


@functools.lru_cache(maxsize=256)
def _pair_aggregator(discipline: str, psi: SensingFunction) -> np.ndarray:
    """0/1 matrix taking the lifted joint vector to the flattened (x_i, x_j) pmf.

    Arbitrary discipline: the lifted vector is lambda^{(x)c} over pair tuples
    ((a_1,b_1),...,(a_c,b_c)).  Contiguous: it is lambda itself.
    """
    V, c, m = psi.alphabet_size, psi.arity, psi.n_outputs
    N = V ** c
    if discipline == "arbitrary":
        tuples = np.array(list(itertools.product(range(V * V), repeat=c)), dtype=np.int64)
        tuples = tuples.reshape(-1, c)
        a_digits, b_digits = np.divmod(tuples, V)
        powers = V ** np.arange(c - 1, -1, -1, dtype=np.int64)
        a_idx = a_digits @ powers
        b_idx = b_digits @ powers
    else:
        a_idx, b_idx = np.divmod(np.arange(N * N, dtype=np.int64), N)
    target = psi.index[a_idx] * m + psi.index[b_idx]
    agg = np.zeros((target.size, m * m))
    agg[np.arange(target.size), target] = 1.0
    return agg


def _restrict_joint(probs: np.ndarray, V: int, order: int, keep: int) -> np.ndarray:
    """Marginal of a batch of joint types on the first ``keep`` window positions."""
    if keep == order:
        return probs
    G = probs.shape[0]
    t = probs.reshape((G,) + (V,) * (2 * order))
    drop = tuple(range(1 + keep, 1 + order)) + tuple(range(1 + order + keep, 1 + 2 * order))
    return t.sum(axis=drop).reshape(G, -1)


def _restrict_type(probs: np.ndarray, V: int, order: int, keep: int) -> np.ndarray:
    if keep == order:
        return probs
    G = probs.shape[0]
    t = probs.reshape((G,) + (V,) * order)
    return t.sum(axis=tuple(range(1 + keep, 1 + order))).reshape(G, -1)


def _check_type_order(model: ModelSpec, order: int, stencil) -> None:
    if model.discipline == "arbitrary":
        if order != 1:
            raise OrderMismatch("the arbitrary discipline takes order-1 types", field="gamma")
    elif model.discipline == "contiguous1d":
        if order != model.type_order or stencil is not None:
            raise OrderMismatch(f"contiguous model needs order-{model.type_order} types",
                                field="gamma")
    else:
        if stencil is None or tuple(stencil) != model.stencil:
            raise OrderMismatch("2D model needs stencil-pattern types", field="gamma")


def output_dist_batch(model: ModelSpec, gammas: np.ndarray, psi: Optional[SensingFunction] = None,
                      order: Optional[int] = None) -> np.ndarray:
    """Vectorized P^gamma(x) for a (G, V^order) batch of type vectors."""
    psi = psi or model.psi
    gammas = np.atleast_2d(gammas)
    V = model.alphabet_size
    if model.discipline == "arbitrary":
        lifted = _power(gammas, psi.arity)
    else:
        order = order or model.type_order
        lifted = _restrict_type(gammas, V, order, psi.arity)
    onehot = np.zeros((psi.index.size, psi.n_outputs))
    onehot[np.arange(psi.index.size), psi.index] = 1.0
    return lifted @ onehot


def joint_output_dist_batch(model: ModelSpec, lams: np.ndarray,
                            psi: Optional[SensingFunction] = None,
                            order: Optional[int] = None) -> np.ndarray:
    """Vectorized P^lambda(x_i, x_j) for a (G, V^{2 order}) batch; returns (G, m, m)."""
    psi = psi or model.psi
    lams = np.atleast_2d(lams)
    V, m = model.alphabet_size, psi.n_outputs
    if model.discipline == "arbitrary":
        lifted = _power(lams, psi.arity)
    else:
        order = order or model.type_order
        lifted = _restrict_joint(lams, V, order, psi.arity)
    return (lifted @ _pair_aggregator(model.discipline, psi)).reshape(-1, m, m)


def output_dist(model: ModelSpec, gamma: TypeHistogram, psi=None) -> np.ndarray:
    """Law of a random sensor's ideal output when the target vector has type gamma."""
    _check_type_order(model, gamma.order, gamma.stencil)
    return output_dist_batch(model, gamma.probs[None, :], psi, gamma.order)[0]


def joint_output_dist(model: ModelSpec, lam: JointType, psi=None) -> np.ndarray:
    """Joint law of the ideal outputs for two target vectors at joint type lambda."""
    _check_type_order(model, lam.order, lam.stencil)
    return joint_output_dist_batch(model, lam.probs[None, :], psi, lam.order)[0]


def pxy(model: ModelSpec, gamma: TypeHistogram, cls: Optional[SensorClass] = None) -> np.ndarray:
    """P^gamma_{X_i Y}(x, y) = P^gamma(x) W(y|x)."""
    cls = cls or model.classes()[0]
    px = output_dist(model, gamma, cls.psi)
    return px[:, None] * cls.noise.matrix


def qxy(model: ModelSpec, lam: JointType, cls: Optional[SensorClass] = None) -> np.ndarray:
    """Q^lambda_{X_i Y}(x, y) = sum_a P^lambda(x, a) W(y|a)."""
    cls = cls or model.classes()[0]
    return joint_output_dist(model, lam, cls.psi) @ cls.noise.matrix


def divergence(model: ModelSpec, gamma: TypeHistogram, lam: JointType) -> float:
    """D(P^gamma_{XY} || Q^lambda_{XY}) in bits, alpha-weighted over sensor classes."""
    return sum(cls.alpha * kl(pxy(model, gamma, cls), qxy(model, lam, cls))
               for cls in model.classes())


def mixture_divergence(model: ModelSpec, gamma: TypeHistogram, lam: JointType) -> float:
    """sum_l alpha_l D(P^{gamma,l}_{XY} || Q^{lambda,l}_{XY}) for a heterogeneous model."""
    if not model.mixture:
        raise NoMixture("model has no mixture classes", field="mixture")
    return divergence(model, gamma, lam)


def channel_mutual_information(model: ModelSpec, gamma: TypeHistogram,
                               cls: Optional[SensorClass] = None) -> float:
    """I(X;Y) for input law P^gamma through the sensor's noise channel."""
    from .types import mutual_information

    return mutual_information(pxy(model, gamma, cls))
