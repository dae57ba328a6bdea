"""Types, circular c-order types, joint types and their information algebra.

Pattern ordering is normative everywhere in senscap: a length-c pattern
``a = (a_1, ..., a_c)`` over an alphabet of size ``V`` is stored at index
``sum(a_u * V**(c-u))`` (radix-V, read left to right).  A joint pattern pair
``(a, b)`` is stored at ``index(a) * V**c + index(b)``, i.e. ``probs`` reshaped
to ``(V,)*c + (V,)*c`` has the i-vector's positions on the leading axes.

All entropies are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.special import entr, rel_entr

from .errors import (
    EmptyVector,
    InstanceTooLarge,
    InvalidType,
    LengthMismatch,
    NonExactType,
    OrderExceedsLength,
)

SIMPLEX_TOL = 1e-12
EXACT_TOL = 1e-9
MAX_ORDER = 8
MAX_STENCIL = 13
ENUMERATION_LIMIT = 24

INFINITE = math.inf


def as_symbols(v, alphabet_size: Optional[int] = None) -> np.ndarray:
    """Coerce ``"0010110"``, a list, or an array into an integer symbol vector."""
    if isinstance(v, str):
        arr = np.array([int(ch, 36) for ch in v.strip()], dtype=np.int64)
    else:
        arr = np.asarray(v, dtype=np.int64)
    if arr.size == 0:
        raise EmptyVector("symbol vector is empty", field="v")
    if arr.min() < 0 or (alphabet_size is not None and arr.max() >= alphabet_size):
        raise InvalidType(f"symbols must lie in 0..{alphabet_size}", field="v")
    return arr


def _infer_alphabet(*vectors: np.ndarray) -> int:
    return max(2, max(int(v.max()) for v in vectors) + 1)


def _window_codes(v: np.ndarray, c: int, V: int, circular: bool) -> np.ndarray:
    """Radix-V code of every length-c window of ``v`` (wrapping when circular)."""
    k = v.shape[-1]
    if circular:
        idx = (np.arange(k)[:, None] + np.arange(c)[None, :]) % k
    else:
        idx = np.arange(k - c + 1)[:, None] + np.arange(c)[None, :]
    weights = V ** np.arange(c - 1, -1, -1, dtype=np.int64)
    return v[..., idx] @ weights


def _check_simplex(probs: np.ndarray, tol: float, what: str) -> None:
    if probs.ndim != 1:
        raise InvalidType(f"{what} probabilities must be a flat vector")
    if np.any(probs < -tol):
        raise InvalidType(f"{what} has negative entries")
    if abs(probs.sum() - 1.0) > tol:
        raise InvalidType(f"{what} entries sum to {probs.sum()!r}, not 1")


def _check_exact(probs: np.ndarray, k: int, what: str) -> None:
    scaled = probs * k
    if np.max(np.abs(scaled - np.rint(scaled))) > EXACT_TOL:
        raise InvalidType(f"{what} is not an exact type with denominator {k}")


@dataclass(frozen=True, eq=False)
class TypeHistogram:
    """Normalized pattern frequencies of one vector (``order=1`` is a plain type).

    ``stencil`` is set for two-dimensional pattern types; it lists the (dy, dx)
    offsets whose symbols make up a pattern, in pattern-digit order.
    """

    order: int
    alphabet_size: int
    probs: np.ndarray
    denominator: Optional[int] = None
    circular: bool = True
    stencil: Optional[tuple] = None
    tol: float = field(default=SIMPLEX_TOL, repr=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).ravel()
        object.__setattr__(self, "probs", probs)
        if self.alphabet_size < 2:
            raise InvalidType("alphabet size must be at least 2")
        if probs.size != self.alphabet_size ** self.order:
            raise InvalidType(
                f"expected {self.alphabet_size ** self.order} entries, got {probs.size}"
            )
        _check_simplex(probs, self.tol, "type")
        if self.denominator is not None:
            _check_exact(probs, self.denominator, "type")
        if self.circular and self.stencil is None and self.order > 1:
            left, right = _shift_marginals(self.tensor(), self.order)
            if np.max(np.abs(left - right)) > max(self.tol, 1e-12):
                raise InvalidType("circular type is not shift consistent")

    @property
    def is_exact(self) -> bool:
        return self.denominator is not None

    @property
    def counts(self) -> np.ndarray:
        if self.denominator is None:
            raise NonExactType("type has no exact denominator")
        return np.rint(self.probs * self.denominator).astype(np.int64)

    def as_fractions(self) -> list:
        return [Fraction(int(n), self.denominator) for n in self.counts]

    def tensor(self) -> np.ndarray:
        return self.probs.reshape((self.alphabet_size,) * self.order)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "alphabet": self.alphabet_size,
            "denominator": self.denominator,
            "probs": [float(p) for p in self.probs],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TypeHistogram":
        return cls(int(doc["order"]), int(doc["alphabet"]), np.asarray(doc["probs"], float),
                   doc.get("denominator"))

    def same_as(self, other: "TypeHistogram") -> bool:
        """Rational equality for exact types, 1e-12 closeness otherwise."""
        if (self.order, self.alphabet_size) != (other.order, other.alphabet_size):
            return False
        if self.is_exact and other.is_exact:
            return self.as_fractions() == other.as_fractions()
        return bool(np.allclose(self.probs, other.probs, atol=SIMPLEX_TOL, rtol=0))


@dataclass(frozen=True, eq=False)
class JointType:
    """Joint pattern frequencies of a vector pair, flattened as described above."""

    order: int
    alphabet_size: int
    probs: np.ndarray
    denominator: Optional[int] = None
    circular: bool = True
    stencil: Optional[tuple] = None
    tol: float = field(default=SIMPLEX_TOL, repr=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).ravel()
        object.__setattr__(self, "probs", probs)
        if probs.size != self.alphabet_size ** (2 * self.order):
            raise InvalidType(
                f"expected {self.alphabet_size ** (2 * self.order)} entries, got {probs.size}"
            )
        _check_simplex(probs, self.tol, "joint type")
        if self.denominator is not None:
            _check_exact(probs, self.denominator, "joint type")
        if self.circular and self.stencil is None and self.order > 1:
            left, right = _shift_marginals(self.tensor(), self.order, joint=True)
            if np.max(np.abs(left - right)) > max(self.tol, 1e-12):
                raise InvalidType("circular joint type is not shift consistent")

    @property
    def is_exact(self) -> bool:
        return self.denominator is not None

    @property
    def n_patterns(self) -> int:
        return self.alphabet_size ** self.order

    @property
    def counts(self) -> np.ndarray:
        if self.denominator is None:
            raise NonExactType("joint type has no exact denominator")
        return np.rint(self.probs * self.denominator).astype(np.int64)

    def as_fractions(self) -> list:
        return [Fraction(int(n), self.denominator) for n in self.counts]

    def matrix(self) -> np.ndarray:
        """``probs`` as an (i-pattern, j-pattern) matrix."""
        return self.probs.reshape(self.n_patterns, self.n_patterns)

    def tensor(self) -> np.ndarray:
        return self.probs.reshape((self.alphabet_size,) * (2 * self.order))

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "alphabet": self.alphabet_size,
            "denominator": self.denominator,
            "probs": [float(p) for p in self.probs],
        }

    @classmethod
    def from_dict(cls, doc: dict, circular: bool = True) -> "JointType":
        return cls(int(doc["order"]), int(doc["alphabet"]), np.asarray(doc["probs"], float),
                   doc.get("denominator"), circular=circular)

    def same_as(self, other: "JointType") -> bool:
        if (self.order, self.alphabet_size) != (other.order, other.alphabet_size):
            return False
        if self.is_exact and other.is_exact:
            return self.as_fractions() == other.as_fractions()
        return bool(np.allclose(self.probs, other.probs, atol=SIMPLEX_TOL, rtol=0))


def _shift_marginals(t: np.ndarray, c: int, joint: bool = False):
    """(drop-last, drop-first) marginals of a c-order (joint) tensor."""
    if joint:
        return t.sum(axis=(c - 1, 2 * c - 1)), t.sum(axis=(0, c))
    return t.sum(axis=c - 1), t.sum(axis=0)


def shift_inconsistency(lam: JointType) -> float:
    """Largest violation of joint shift consistency (0 for any circular type)."""
    if lam.order < 2 or lam.stencil is not None:
        return 0.0
    left, right = _shift_marginals(lam.tensor(), lam.order, joint=True)
    return float(np.max(np.abs(left - right)))


# ---------------------------------------------------------------------------
# construction from vectors


def compute_type(v, c: int = 1, circular: bool = True,
                 alphabet_size: Optional[int] = None) -> TypeHistogram:
    """Exact empirical type of the length-c windows of ``v``.

    >>> compute_type("0010110").as_fractions()
    [Fraction(4, 7), Fraction(3, 7)]
    """
    v = as_symbols(v, alphabet_size)
    V = alphabet_size or _infer_alphabet(v)
    k = v.size
    _check_order(c, k, circular)
    codes = _window_codes(v, c, V, circular)
    counts = np.bincount(codes, minlength=V ** c)
    return TypeHistogram(c, V, counts / codes.size, denominator=int(codes.size),
                         circular=circular)


def compute_joint_type(vi, vj, c: int = 1, circular: bool = True,
                       alphabet_size: Optional[int] = None) -> JointType:
    """Exact empirical joint type of aligned length-c windows of two vectors."""
    vi = as_symbols(vi, alphabet_size)
    vj = as_symbols(vj, alphabet_size)
    if vi.size != vj.size:
        raise LengthMismatch(f"vector lengths differ ({vi.size} vs {vj.size})")
    V = alphabet_size or _infer_alphabet(vi, vj)
    _check_order(c, vi.size, circular)
    N = V ** c
    codes = _window_codes(vi, c, V, circular) * N + _window_codes(vj, c, V, circular)
    counts = np.bincount(codes, minlength=N * N)
    return JointType(c, V, counts / codes.size, denominator=int(codes.size), circular=circular)


def _check_order(c: int, k: int, circular: bool) -> None:
    if c < 1:
        raise InvalidType("order must be >= 1", field="c")
    if c > MAX_ORDER:
        raise InvalidType(f"order capped at {MAX_ORDER}", field="c")
    if c > k:
        raise OrderExceedsLength(f"order {c} exceeds vector length {k}", field="c")


def disk_stencil(radius: float) -> tuple:
    """Grid offsets within Euclidean distance ``radius`` of the origin, row-major."""
    r = int(math.floor(radius))
    cells = tuple(
        (dy, dx)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if dy * dy + dx * dx <= radius * radius + 1e-12
    )
    if len(cells) > MAX_STENCIL:
        raise InvalidType(f"stencil has {len(cells)} cells; capped at {MAX_STENCIL}",
                          field="c")
    return cells


def center_index(stencil: tuple) -> int:
    return stencil.index((0, 0))


def _field_codes(f: np.ndarray, stencil: tuple, V: int) -> np.ndarray:
    rows, cols = f.shape
    codes = np.zeros((rows, cols), dtype=np.int64)
    for dy, dx in stencil:
        codes = codes * V + np.roll(f, shift=(-dy, -dx), axis=(0, 1))
    return codes.ravel()


def compute_type_2d(f, stencil: tuple, alphabet_size: int = 2) -> TypeHistogram:
    """Toroidal stencil-pattern type of a 2D field."""
    f = np.asarray(f, dtype=np.int64)
    codes = _field_codes(f, stencil, alphabet_size)
    counts = np.bincount(codes, minlength=alphabet_size ** len(stencil))
    return TypeHistogram(len(stencil), alphabet_size, counts / codes.size,
                         denominator=int(codes.size), stencil=tuple(stencil))


def compute_joint_type_2d(fi, fj, stencil: tuple, alphabet_size: int = 2) -> JointType:
    fi = np.asarray(fi, dtype=np.int64)
    fj = np.asarray(fj, dtype=np.int64)
    if fi.shape != fj.shape:
        raise LengthMismatch("field shapes differ")
    N = alphabet_size ** len(stencil)
    codes = _field_codes(fi, stencil, alphabet_size) * N + _field_codes(fj, stencil, alphabet_size)
    counts = np.bincount(codes, minlength=N * N)
    return JointType(len(stencil), alphabet_size, counts / codes.size,
                     denominator=int(codes.size), stencil=tuple(stencil))


# ---------------------------------------------------------------------------
# marginals


def type_marginals(lam: JointType):
    """(gamma_i, gamma_j) of a joint type."""
    m = lam.matrix()
    kw = dict(denominator=lam.denominator, circular=lam.circular, stencil=lam.stencil,
              tol=max(lam.tol, SIMPLEX_TOL))
    gi = TypeHistogram(lam.order, lam.alphabet_size, m.sum(axis=1), **kw)
    gj = TypeHistogram(lam.order, lam.alphabet_size, m.sum(axis=0), **kw)
    return gi, gj


def symbol_marginal(lam: JointType) -> np.ndarray:
    """The V x V matrix lambda_(a)(b): how often the two vectors read (a, b) at one site.

    1D types use the first window position (all positions agree for circular
    types); stencil types use the centre cell.
    """
    c, V = lam.order, lam.alphabet_size
    t = lam.tensor()
    pos = 0 if lam.stencil is None else center_index(lam.stencil)
    keep = (pos, c + pos)
    axes = tuple(ax for ax in range(2 * c) if ax not in keep)
    return t.sum(axis=axes).reshape(V, V)


def distortion_of(lam: JointType) -> float:
    """Normalized Hamming distance implied by a joint type (off-diagonal symbol mass)."""
    m = symbol_marginal(lam)
    return float(m.sum() - np.trace(m))


def drop_last(x):
    """Order c-1 marginal summing out the last position (of both vectors for joint types)."""
    c, V = x.order, x.alphabet_size
    if x.stencil is not None:
        raise InvalidType("lower-order marginals are defined for 1D types only")
    if c == 0:
        raise InvalidType("order-0 type has no lower marginal")
    if isinstance(x, JointType):
        t = x.tensor().sum(axis=(c - 1, 2 * c - 1))
        return JointType(c - 1, V, t.ravel(), denominator=x.denominator,
                         circular=x.circular, tol=max(x.tol, SIMPLEX_TOL))
    t = x.tensor().sum(axis=c - 1)
    return TypeHistogram(c - 1, V, t.ravel(), denominator=x.denominator,
                         circular=x.circular, tol=max(x.tol, SIMPLEX_TOL))


def marginalize(lam: JointType):
    """Split a joint type into (gamma_i, gamma_j, lambda', lambda_symbol).

    ``lambda'`` is the order c-1 joint type (order 0 when c == 1, a single
    unit mass) and ``lambda_symbol`` the order-1 joint type at one site.
    """
    gi, gj = type_marginals(lam)
    if lam.stencil is None:
        lam_prev = drop_last(lam)
    else:
        lam_prev = None
    sym = symbol_marginal(lam)
    lam_sym = JointType(1, lam.alphabet_size, sym.ravel(), denominator=lam.denominator,
                        tol=max(lam.tol, SIMPLEX_TOL))
    return gi, gj, lam_prev, lam_sym


# ---------------------------------------------------------------------------
# information measures (bits)


def _probs(p) -> np.ndarray:
    if isinstance(p, (TypeHistogram, JointType)):
        return p.probs
    return np.clip(np.asarray(p, dtype=float).ravel(), 0.0, None)


def entropy(p) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    return float(entr(_probs(p)).sum() / math.log(2))


def kl(p, q) -> float:
    """Kullback-Leibler divergence D(p||q) in bits; ``INFINITE`` on support mismatch."""
    p = _probs(p)
    q = _probs(q)
    if p.shape != q.shape:
        raise LengthMismatch("kl arguments have different shapes")
    if np.any((p > 0) & (q <= 0)):
        return INFINITE
    return float(max(rel_entr(p, q).sum(), 0.0) / math.log(2))


def mutual_information(joint) -> float:
    """I(X;Y) in bits of a joint pmf given as a 2D array."""
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    return entropy(px) + entropy(py) - entropy(joint)


def conditional_entropy(x) -> float:
    """H(last position | preceding c-1 positions) = H(x) - H(x') in bits.

    For order-1 inputs this is just H(x).
    """
    if x.order <= 1:
        return entropy(x)
    return entropy(x) - entropy(drop_last(x))


# ---------------------------------------------------------------------------
# counting


@dataclass(frozen=True)
class CountBound:
    """Bound on |T_{lambda|gamma}|, in bits, with the optional exact count."""

    log2_count_upper: float
    polynomial_factor_log2: float
    exact_count: Optional[int] = None

    @property
    def log2_bound(self) -> float:
        return self.log2_count_upper + self.polynomial_factor_log2

    def holds(self) -> bool:
        if self.exact_count is None:
            return True
        if self.exact_count == 0:
            return True
        return math.log2(self.exact_count) <= self.log2_bound + 1e-9


def polynomial_factor_log2(k: int, c: int, V: int = 2) -> float:
    """log2 C(k) with C(k) = V^{2(c-1)} k^{V^{c-1}} (k+1)^{V^{2(c-1)}}."""
    return (2 * (c - 1) * math.log2(V)
            + V ** (c - 1) * math.log2(k)
            + V ** (2 * (c - 1)) * math.log2(k + 1))


def joint_type_count_exact(lam: JointType) -> int:
    """Number of partners of a fixed order-1 vector at joint type ``lam``.

    Product over symbols a of the multinomial (k gamma_a; k lambda_ab, b in V),
    the binary case being C(k g0, k l00) C(k g1, k l11).
    """
    if lam.order != 1:
        raise InvalidType("closed-form count is for order-1 joint types")
    m = lam.counts.reshape(lam.alphabet_size, lam.alphabet_size)
    total = 1
    for row in m:
        n = int(row.sum())
        for cnt in row:
            total *= math.comb(n, int(cnt))
            n -= int(cnt)
    return total


def count_type_classes(lam: JointType, k: Optional[int] = None, reference=None,
                       brute_force_limit: int = 16) -> CountBound:
    """Bound the number of vectors sharing joint type ``lam`` with a fixed vector.

    Order 1: the multinomial product is exact and bounded by 2^{k(H(lam)-H(gamma))}.
    Order c > 1: 2^{k(H(lam~|lam') - H(gamma~|gamma'))} times the polynomial C(k);
    ``exact_count`` comes from exhaustive enumeration against ``reference`` (or a
    vector of type gamma found by search) when k <= ``brute_force_limit``.
    """
    if not lam.is_exact:
        raise NonExactType("counting needs an exact joint type", field="lambda")
    k = k or lam.denominator
    if k != lam.denominator:
        raise NonExactType(f"joint type denominator {lam.denominator} != k={k}")
    gi, _ = type_marginals(lam)
    if lam.order == 1:
        upper = k * (entropy(lam) - entropy(gi))
        return CountBound(upper, 0.0, joint_type_count_exact(lam))
    upper = k * (conditional_entropy(lam) - conditional_entropy(gi))
    poly = polynomial_factor_log2(k, lam.order, lam.alphabet_size)
    exact = None
    if k <= brute_force_limit:
        if reference is None:
            reference = find_vector_of_type(gi, k)
        if reference is not None:
            exact, _ = enumerate_type_class(reference, lam, lam.order, lam.circular)
    return CountBound(upper, poly, exact)


def _all_vectors(k: int, V: int, start: int, stop: int) -> np.ndarray:
    """Rows are the radix-V expansions (first position most significant) of start..stop-1."""
    idx = np.arange(start, stop, dtype=np.int64)
    powers = V ** np.arange(k - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % V


def find_vector_of_type(gamma: TypeHistogram, k: int) -> Optional[np.ndarray]:
    """Lexicographically first length-k vector with type ``gamma`` (exhaustive)."""
    V, c = gamma.alphabet_size, gamma.order
    if k > ENUMERATION_LIMIT:
        raise InstanceTooLarge(f"k={k} exceeds the enumeration limit {ENUMERATION_LIMIT}")
    target = gamma.counts
    total = V ** k
    chunk = 1 << 15
    for start in range(0, total, chunk):
        vecs = _all_vectors(k, V, start, min(total, start + chunk))
        codes = _window_codes(vecs, c, V, gamma.circular)
        hist = _row_histograms(codes, V ** c)
        hit = np.flatnonzero(np.all(hist == target[None, :], axis=1))
        if hit.size:
            return vecs[hit[0]]
    return None


def _row_histograms(codes: np.ndarray, nbins: int) -> np.ndarray:
    rows = codes.shape[0]
    flat = (np.arange(rows)[:, None] * nbins + codes).ravel()
    return np.bincount(flat, minlength=rows * nbins).reshape(rows, nbins)


def enumerate_type_class(reference, lam: JointType, c: Optional[int] = None,
                         circular: bool = True, return_vectors: bool = False):
    """Exhaustively count partners v_j with joint type ``lam`` against ``reference``.

    Returns ``(count, vectors)``; ``vectors`` is None unless requested.
    """
    c = c or lam.order
    V = lam.alphabet_size
    ref = as_symbols(reference, V)
    k = ref.size
    if k > ENUMERATION_LIMIT:
        raise InstanceTooLarge(f"k={k} exceeds the enumeration limit {ENUMERATION_LIMIT}")
    if not lam.is_exact or lam.denominator != (k if circular else k - c + 1):
        return 0, ([] if return_vectors else None)
    N = V ** c
    target = lam.counts
    ref_codes = _window_codes(ref, c, V, circular) * N
    total = V ** k
    chunk = 1 << 15
    count = 0
    found = []
    for start in range(0, total, chunk):
        vecs = _all_vectors(k, V, start, min(total, start + chunk))
        codes = ref_codes[None, :] + _window_codes(vecs, c, V, circular)
        hist = _row_histograms(codes, N * N)
        hit = np.all(hist == target[None, :], axis=1)
        count += int(hit.sum())
        if return_vectors and hit.any():
            found.extend(vecs[hit])
    return count, (found if return_vectors else None)


def uniform_type(order: int, alphabet_size: int = 2) -> TypeHistogram:
    n = alphabet_size ** order
    return TypeHistogram(order, alphabet_size, np.full(n, 1.0 / n))


def product_joint(gi: TypeHistogram, gj: Optional[TypeHistogram] = None) -> JointType:
    """Independent coupling gamma_i (x) gamma_j (only shift consistent for order 1)."""
    gj = gj or gi
    return JointType(gi.order, gi.alphabet_size, np.outer(gi.probs, gj.probs).ravel(),
                     circular=gi.order == 1)


def diagonal_joint(g: TypeHistogram) -> JointType:
    """Self-joint type of a vector with itself."""
    return JointType(g.order, g.alphabet_size, np.diag(g.probs).ravel(),
                     denominator=g.denominator, circular=g.circular, stencil=g.stencil)


def parse_pattern(pattern: str) -> int:
    """Index of a binary-style pattern string such as ``"01"``."""
    return int(pattern, 2)


def pattern_pairs_to_joint(entries: dict, order: int, alphabet_size: int = 2,
                           denominator: Optional[int] = None) -> JointType:
    """Build a joint type from ``{("00", "10"): Fraction(1, 8), ...}``; missing pairs are 0."""
    N = alphabet_size ** order
    probs = np.zeros(N * N)
    for (a, b), val in entries.items():
        ia = int(a, alphabet_size)
        ib = int(b, alphabet_size)
        probs[ia * N + ib] = float(val)
    return JointType(order, alphabet_size, probs, denominator=denominator)


def histogram_from_values(values: Sequence[float], order: int, alphabet_size: int = 2,
                          denominator: Optional[int] = None) -> TypeHistogram:
    return TypeHistogram(order, alphabet_size, np.asarray(values, float), denominator)
