import csv
import json
from fractions import Fraction

import numpy as np
import pytest

from oracles import closed_form_terms, enumerate_training_sets, expected_error_table, one_nn
from paretofair.data import Dataset, SyntheticSpec, generate_synthetic
from paretofair.decomposition import (ReplicateError, decompose_fairness, decompose_point,
                                      decompose_predictions, main_prediction,
                                      optimal_prediction, train_replicates)
from paretofair.models import DivergenceError


# --- optimal and main predictions ------------------------------------------

class FixedConditional:
    def __init__(self, p):
        self.p = p

    def __call__(self, X, groups=None):
        return np.full(np.atleast_2d(X).shape[0], self.p)


def test_optimal_prediction_examples():
    y, N = optimal_prediction([[0.0]], FixedConditional(0.8), "zero_one")
    assert y[0] == 1 and N[0] == pytest.approx(0.2)
    y, N = optimal_prediction([[0.0]], FixedConditional(0.8), "squared")
    assert y[0] == pytest.approx(0.8) and N[0] == pytest.approx(0.16)
    y, N = optimal_prediction(np.zeros((3, 1)), None, "zero_one", observed_label=[1, 0, 1])
    assert y.tolist() == [1, 0, 1] and np.all(N == 0)
    with pytest.raises(ValueError, match="observed_label"):
        optimal_prediction([[0.0]], None, "zero_one")


def test_main_prediction_examples():
    y, tie = main_prediction([[1], [1], [1]], "zero_one")
    assert y[0] == 1 and not tie[0]
    y, _ = main_prediction([[1], [1], [0]], "zero_one")
    # the mode minimises expected disagreement: check both candidates
    votes = np.array([1, 1, 0])
    assert y[0] == min((0, 1), key=lambda c: np.mean(votes != c))
    y, _ = main_prediction([[0.2], [0.4], [0.6]], "squared")
    assert y[0] == pytest.approx(0.4)
    y, tie = main_prediction([[1], [0]], "false_negative_rate")
    assert y[0] == 1 and tie[0]
    with pytest.raises(ValueError):
        main_prediction(np.zeros((0, 3)), "zero_one")


# --- exhaustive enumeration oracle -----------------------------------------

DOMAIN = [0, 1, 2, 3, 4]
P = {0: Fraction(1, 10), 1: Fraction(3, 10), 2: Fraction(1, 2), 3: Fraction(7, 10),
     4: Fraction(9, 10)}


def _enumerated_predictions(domain, p, size):
    preds, weights = [], []
    for xs, ys, w in enumerate_training_sets(domain, p, size):
        f = one_nn(xs, ys)
        preds.append([f(x) for x in domain])
        weights.append(float(w))
    return np.array(preds, dtype=float), np.array(weights)


@pytest.mark.parametrize("size", [1, 2, 3, 4])
@pytest.mark.parametrize("loss", ["squared", "zero_one", "false_negative_rate"])
def test_identity_against_enumeration(size, loss):
    preds, w = _enumerated_predictions(DOMAIN, P, size)
    p = np.array([1.0 if loss == "false_negative_rate" else float(P[x]) for x in DOMAIN])
    dec = decompose_predictions(preds, p, loss, weights=w)
    dist, err = expected_error_table(DOMAIN, P, size, loss)
    for i, x in enumerate(DOMAIN):
        assert abs(dec.err[i] - float(err[x])) < 1e-10
        assert abs(dec.reconstruction()[i] - float(err[x])) < 1e-10
        N, B, V, c1, c2 = closed_form_terms(P[x], dist[x][1], loss)
        for got, want in ((dec.N, N), (dec.B, B), (dec.V, V), (dec.c1, c1), (dec.c2, c2)):
            assert abs(got[i] - float(want)) < 1e-10
    for term in (dec.N, dec.B, dec.V):
        assert np.all(term >= -1e-15)


def test_three_point_domain_size_three():
    dom = [0, 1, 2]
    p = {0: Fraction(1, 5), 1: Fraction(1, 2), 2: Fraction(4, 5)}
    preds, w = _enumerated_predictions(dom, p, 3)
    dec = decompose_predictions(preds, [float(p[x]) for x in dom], "zero_one", weights=w)
    _, err = expected_error_table(dom, p, 3, "zero_one")
    np.testing.assert_allclose(dec.reconstruction(), [float(err[x]) for x in dom],
                               rtol=0, atol=1e-12)


def test_squared_loss_is_plain_sum():
    rng = np.random.default_rng(0)
    scores = rng.random((15, 8))
    dec = decompose_predictions(scores, rng.random(8), "squared")
    np.testing.assert_allclose(dec.err, dec.N + dec.B + dec.V, atol=1e-14)
    assert np.all(dec.c1 == 1) and np.all(dec.c2 == 1)


def test_fnr_equals_zero_one_on_positive_rows():
    rng = np.random.default_rng(1)
    preds = rng.integers(0, 2, (21, 10)).astype(float)
    p = rng.random(10)
    a = decompose_predictions(preds, p, "false_negative_rate")
    b = decompose_predictions(preds, p, "zero_one")
    for k in ("N", "B", "V", "c1", "c2", "err"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


# --- estimator with trainers -----------------------------------------------

def _tiny(seed=0, n=(30, 30), noise=(0.1, 0.1)):
    spec = SyntheticSpec(list(n), [[[-1, 0], [1, 0]], [[-1, 0], [1, 0]]],
                         [[1, 1], [1, 1]], list(noise), seed=seed)
    return generate_synthetic(spec)


def nn_trainer(ds, seed):
    X, y = ds.features, ds.labels

    def predict(Q):
        d = ((np.atleast_2d(Q)[:, None, :] - X[None]) ** 2).sum(axis=2)
        return y[np.argmin(d, axis=1)].astype(float)
    return predict


def test_constant_learners():
    ds, _ = _tiny()
    x = [[0.3, 0.1]]
    # perfect constant learner: always predicts y* = 1 (p = 0.7)
    dec = decompose_point(x, 1, FixedConditional(0.7), lambda d, s: (lambda X: np.ones(len(X))),
                          ds, R=5)
    assert dec.B[0] == 0 and dec.V[0] == 0
    assert dec.err[0] == pytest.approx(dec.c1[0] * dec.N[0])
    # constant wrong learner with N = 0
    dec = decompose_point(x, 0, FixedConditional(0.0), lambda d, s: (lambda X: np.ones(len(X))),
                          ds, R=5)
    assert (dec.B[0], dec.V[0], dec.err[0]) == (1.0, 0.0, 1.0)


def test_replicates_are_seeded_and_skip_divergence():
    ds, _ = _tiny()
    X = ds.features[:5]
    a, info = train_replicates(nn_trainer, ds, X, 7, seed=3)
    b, _ = train_replicates(nn_trainer, ds, X, 7, seed=3)
    np.testing.assert_array_equal(a, b)
    assert info["succeeded"] == 7 and info["resampling"] == "bootstrap"
    calls = []

    def flaky(d, s):
        calls.append(s)
        if len(calls) % 3 == 0:
            raise DivergenceError(1, float("nan"))
        return nn_trainer(d, s)

    scores, info = train_replicates(flaky, ds, X, 9, seed=0)
    assert scores.shape == (6, 5) and info["failed"] == [2, 5, 8]

    def broken(d, s):
        raise DivergenceError(1, float("nan"))

    with pytest.raises(ReplicateError):
        train_replicates(broken, ds, X, 4, seed=0)
    with pytest.raises(ValueError):
        train_replicates(nn_trainer, ds, X, 1, seed=0)


def test_variance_standard_error_scales_with_replicates():
    ds, cond = _tiny(n=(15, 15), noise=(0.3, 0.3))
    x = [[0.05, 0.0]]
    sds = {}
    for R in (10, 40, 160):
        est = [decompose_point(x, 1, cond, nn_trainer, ds, R=R, seed=1000 * R + s).V[0]
               for s in range(60)]
        sds[R] = np.std(est, ddof=1)
    # halving per 4x replicates, within a factor of 2
    for lo, hi in ((10, 40), (40, 160)):
        assert 1.0 <= sds[lo] / sds[hi] <= 4.0


def test_decompose_fairness_report(tmp_path):
    tr, cond = _tiny(seed=2)
    te, _ = _tiny(seed=3, n=(40, 40))
    rep = decompose_fairness(te, cond, nn_trainer, tr, R=9, loss="zero_one", seed=0)
    assert [g.count for g in rep.groups] == [40, 40]
    for g in rep.groups:
        assert g.err == pytest.approx(g.N + g.B + g.V, abs=1e-12)
        assert g.regime_ratio == pytest.approx((g.B + g.N_raw) / g.V_raw)
    assert rep.e_fair["g0|g1"] >= 0
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["meta"]["replicates"] == 9 and doc["meta"]["label_model"] == "conditional"
    assert doc["dominant"] in ("bias_noise", "variance")
    rep.write_points(tmp_path / "pts.csv", te.group_names)
    rows = list(csv.DictReader(open(tmp_path / "pts.csv")))
    assert len(rows) == 80 and rows[0]["group"] == "g0"


def test_fnr_report_uses_positive_rows_only():
    tr, cond = _tiny(seed=4)
    te, _ = _tiny(seed=5, n=(40, 40))
    fnr = decompose_fairness(te, cond, nn_trainer, tr, R=9, loss="false_negative_rate", seed=1)
    zo = decompose_fairness(te.subset(np.flatnonzero(te.labels == 1)), cond, nn_trainer, tr,
                            R=9, loss="zero_one", seed=1)
    assert sum(g.count for g in fnr.groups) == int(te.labels.sum())
    for a, b in zip(fnr.groups, zo.groups):
        assert (a.N, a.B, a.V, a.err) == (b.N, b.B, b.V, b.err)


def test_single_label_mode_has_no_noise():
    tr, _ = _tiny(seed=6)
    te, _ = _tiny(seed=7, n=(20, 20))
    rep = decompose_fairness(te, None, nn_trainer, tr, R=5)
    assert all(g.N == 0 for g in rep.groups)
    assert rep.meta["label_model"] == "single_label"


def test_symmetric_groups_have_small_fairness_violation():
    tr, cond = _tiny(seed=8, n=(60, 60))
    te, _ = _tiny(seed=9, n=(300, 300))
    rep = decompose_fairness(te, cond, nn_trainer, tr, R=15, seed=2)
    assert rep.e_fair["g0|g1"] <= 3 * rep.e_fair_se["g0|g1"]


def test_absent_group_is_an_error():
    tr, cond = _tiny()
    te = Dataset(np.zeros((3, 2)), [0, 1, 1], [0, 0, 0], ("g0", "g1"))
    with pytest.raises(ValueError, match="g1"):
        decompose_fairness(te, cond, nn_trainer, tr, R=3)
    with pytest.raises(ValueError, match="loss"):
        decompose_fairness(te, cond, nn_trainer, tr, R=3, loss="hinge")
