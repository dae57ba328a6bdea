import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from senscap.errors import ConfigError, InvalidProbability, NoMixture, OrderMismatch
from senscap.models import (
    SensingFunction,
    divergence,
    joint_output_dist,
    load_model,
    make_exponential_noise,
    mixture_divergence,
    model_from_dict,
    output_dist,
    pxy,
    qxy,
    simple_model,
)
from senscap.types import (
    JointType,
    TypeHistogram,
    compute_type,
    diagonal_joint,
    kl,
    mutual_information,
    product_joint,
    type_marginals,
)

simplex2 = st.floats(0.0, 1.0).map(lambda a: np.array([a, 1 - a]))


def arb_joint(rng, V=2):
    return JointType(1, V, rng.dirichlet(np.ones(V * V)))


class TestSensingFunction:
    def test_weighted_all_ones_is_sum(self):
        s = SensingFunction("sum", 3)
        w = SensingFunction("weighted_sum", 3, weights=(1.0, 1.0, 1.0))
        assert np.array_equal(s.alphabet, w.alphabet)
        assert np.array_equal(s.index, w.index)

    def test_weighted_alphabet_is_image(self):
        w = SensingFunction("weighted_sum", 4, weights=(1, 0.5, 0.25, 0.1))
        assert w.n_outputs == 16
        assert w((1, 0, 1, 1)) == pytest.approx(1.35)

    def test_merge_tolerance(self):
        w = SensingFunction("weighted_sum", 2, weights=(1.0, 1.0 + 1e-12))
        assert w.n_outputs == 3

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            SensingFunction("weighted_sum", 3, weights=(1, 2))
        with pytest.raises(ConfigError):
            SensingFunction("product", 2)


class TestNoise:
    def test_identity_at_zero(self):
        assert np.array_equal(make_exponential_noise(0.0, 4).matrix, np.eye(4))

    def test_row_example(self):
        W = make_exponential_noise(0.1, [0, 1, 2], decay=2).matrix
        assert W[0] == pytest.approx([0.9, 0.1 * 2 / 3, 0.1 / 3])

    @given(st.floats(0.0, 0.99), st.integers(2, 8), st.floats(1.1, 20))
    def test_offdiagonal_mass(self, p, m, decay):
        W = make_exponential_noise(p, m, decay).matrix
        assert np.allclose(W.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(1 - np.diag(W), p, atol=1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidProbability):
            make_exponential_noise(1.0, 3)


class TestOutputDist:
    @given(simplex2)
    def test_table_two(self, g):
        m = simple_model(2, 0.1)
        got = output_dist(m, TypeHistogram(1, 2, g))
        assert got == pytest.approx([g[0] ** 2, 2 * g[0] * g[1], g[1] ** 2], abs=1e-12)

    def test_contiguous_example(self):
        m = simple_model(2, 0.1, "contiguous1d")
        got = output_dist(m, compute_type("01101000", 2))
        assert got == pytest.approx([3 / 8, 4 / 8, 1 / 8])

    def test_weighted_uniform(self):
        m = simple_model(4, 0.1, weights=(1, 0.5, 0.25, 0.1))
        got = output_dist(m, TypeHistogram(1, 2, [0.5, 0.5]))
        assert got == pytest.approx(np.full(16, 1 / 16))

    def test_order_mismatch(self):
        with pytest.raises(OrderMismatch):
            output_dist(simple_model(2, 0.1), compute_type("0110", 2))
        with pytest.raises(OrderMismatch):
            output_dist(simple_model(2, 0.1, "contiguous1d"), compute_type("0110"))

    def test_empirical_connection_average(self):
        # exhaustive average over all k^c connection tuples for one vector
        v = np.array([0, 1, 1, 0, 1, 0, 0, 0, 1])
        m = simple_model(3, 0.1)
        counts = np.zeros(4)
        for tup in itertools.product(range(v.size), repeat=3):
            counts[v[list(tup)].sum()] += 1
        got = output_dist(m, compute_type(v))
        assert got == pytest.approx(counts / counts.sum(), abs=1e-12)


class TestJointOutputDist:
    def test_table_three(self):
        rng = np.random.default_rng(1)
        lam = arb_joint(rng)
        l00, l01, l10, l11 = lam.probs
        P = joint_output_dist(simple_model(2, 0.1), lam)
        assert P[0, 0] == pytest.approx(l00 ** 2)
        assert P[1, 1] == pytest.approx(2 * (l10 * l01 + l00 * l11))
        assert P[2, 0] == pytest.approx(l10 ** 2)

    def test_contiguous_table(self):
        rng = np.random.default_rng(2)
        lam = JointType(2, 2, rng.dirichlet(np.ones(16)), circular=False)
        t = lam.matrix()
        P = joint_output_dist(simple_model(2, 0.1, "contiguous1d"), lam)
        assert P[0, 0] == pytest.approx(t[0, 0])
        assert P[1, 2] == pytest.approx(t[2, 3] + t[1, 3])

    def test_product_factorizes_and_marginals(self):
        rng = np.random.default_rng(3)
        m = simple_model(3, 0.1)
        g = TypeHistogram(1, 2, [0.3, 0.7])
        P = joint_output_dist(m, product_joint(g))
        px = output_dist(m, g)
        assert np.allclose(P, np.outer(px, px), atol=1e-12)
        lam = arb_joint(rng)
        gi, gj = type_marginals(lam)
        P = joint_output_dist(m, lam)
        assert np.allclose(P.sum(axis=1), output_dist(m, gi), atol=1e-10)
        assert np.allclose(P.sum(axis=0), output_dist(m, gj), atol=1e-10)


class TestDivergence:
    def test_self_joint_noiseless(self):
        m = simple_model(2, 0.0)
        g = TypeHistogram(1, 2, [0.5, 0.5])
        assert np.allclose(qxy(m, diagonal_joint(g)), pxy(m, g))

    def test_product_gives_mutual_information(self):
        m = simple_model(2, 0.1, decay=2)
        g = TypeHistogram(1, 2, [0.5, 0.5])
        P = pxy(m, g)
        assert kl(P, qxy(m, product_joint(g))) == pytest.approx(mutual_information(P),
                                                                abs=1e-10)

    def test_mixture(self):
        doc = {"discipline": "arbitrary", "c": 2, "mixture": [
            {"alpha": 0.5, "c": 2, "psi": {"kind": "sum"}, "noise": {"kind": "exponential", "p": 0.01}},
            {"alpha": 0.5, "c": 4, "psi": {"kind": "sum"}, "noise": {"kind": "exponential", "p": 0.1}},
        ]}
        mix = model_from_dict(doc)
        a = simple_model(2, 0.01)
        b = simple_model(4, 0.1)
        g = TypeHistogram(1, 2, [0.5, 0.5])
        lam = JointType(1, 2, [0.4, 0.1, 0.1, 0.4])
        lo, hi = sorted([divergence(a, g, lam), divergence(b, g, lam)])
        val = mixture_divergence(mix, g, lam)
        assert lo <= val <= hi
        assert val == pytest.approx(0.5 * (lo + hi))
        with pytest.raises(NoMixture):
            mixture_divergence(a, g, lam)

    def test_identical_classes(self):
        cls = {"c": 3, "psi": {"kind": "sum"}, "noise": {"kind": "exponential", "p": 0.05}}
        mix = model_from_dict({"discipline": "arbitrary", "c": 3, "mixture": [
            {"alpha": 0.5, **cls}, {"alpha": 0.5, **cls}]})
        g = TypeHistogram(1, 2, [0.5, 0.5])
        lam = JointType(1, 2, [0.45, 0.05, 0.05, 0.45])
        assert mixture_divergence(mix, g, lam) == pytest.approx(
            divergence(simple_model(3, 0.05), g, lam))


class TestModelFile:
    def test_roundtrip(self, tmp_path):
        doc = {"discipline": "contiguous1d", "c": 3,
               "psi": {"kind": "lookup", "table": {"000": 0, "001": 1, "010": 1, "011": 2,
                                                   "100": 1, "101": 2, "110": 2, "111": 3}},
               "noise": {"kind": "exponential", "p": 0.1, "decay": 2}}
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        m = load_model(path)
        assert np.array_equal(m.psi.index, simple_model(3, 0.1, "contiguous1d").psi.index)
        again = model_from_dict(json.loads(json.dumps(m.to_dict())))
        assert np.allclose(again.noise.matrix, m.noise.matrix)

    def test_errors_name_field(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            model_from_dict({"discipline": "arbitrary"})
        assert exc.value.field == "c"
        with pytest.raises(ConfigError) as exc:
            model_from_dict({"discipline": "radial", "c": 2, "psi": {"kind": "sum"},
                             "noise": {"kind": "exponential", "p": 0.1}})
        assert exc.value.field == "discipline"
        with pytest.raises(ConfigError) as exc:
            load_model(tmp_path / "missing.json")
        assert exc.value.field == "model"
