import json

import numpy as np
import pytest

from localbias.audit import audit_clusters
from localbias.engine import Hyperparams, fit
from localbias.synth import SyntheticSpec, demo_spec, generate, load_spec, recall_score


def one_component(**over):
    comp = dict(weight=1.0, mean=[0.0, 0.0], spread=1.0, acc_a=1.0, acc_b=1.0,
                sev_mean_a=3.0, sev_mean_b=3.0, sev_std=1.0, frac_a=0.5)
    comp.update(over)
    return SyntheticSpec.from_dict({"n": 300, "dim": 2, "components": [comp]})


def test_no_planted_gap_means_no_bias():
    cohort, truth = generate(one_component(), seed=0)
    assert set(truth) == {0}
    res = fit(cohort, Hyperparams(k=3, seed=0, restarts=2))
    rep = audit_clusters(res, cohort)
    assert rep.global_bias == 0.0 and rep.n_flagged == 0


def test_demo_spec_shape():
    spec = demo_spec()
    assert spec.n == 800 and spec.dim == 8 and len(spec.components) == 4 and spec.planted == 0
    planted = spec.components[0]
    assert (planted.acc_a, planted.acc_b) == (0.55, 0.92)
    assert planted.acc_b - planted.acc_a == pytest.approx(0.37)
    for c in spec.components[1:]:
        assert c.acc_a == c.acc_b
    for c in spec.components:
        assert c.sev_mean_a == c.sev_mean_b


def test_generate_is_deterministic():
    a, ta = generate(demo_spec(), seed=5)
    b, tb = generate(demo_spec(), seed=5)
    assert a == b and np.array_equal(ta, tb)
    c, _ = generate(demo_spec(), seed=6)
    assert c != a


def test_severity_is_non_negative():
    cohort, _ = generate(one_component(sev_mean_a=0.0, sev_mean_b=0.5, sev_std=3.0), seed=1)
    assert cohort.severity.min() >= 0.0
    assert (cohort.severity == 0).any()


@pytest.mark.parametrize("seed", range(3))
def test_empirical_accuracy_within_three_binomial_std(seed):
    spec = demo_spec(n=2000)
    cohort, truth = generate(spec, seed)
    for j, comp in enumerate(spec.components):
        for group_mask, acc in ((cohort.is_a, comp.acc_a), (~cohort.is_a, comp.acc_b)):
            sel = (truth == j) & group_mask
            m = int(sel.sum())
            assert m >= 100
            std = np.sqrt(acc * (1 - acc) / m)
            assert abs(cohort.correct[sel].mean() - acc) <= 3 * std + 1e-12


def test_attribute_decor():
    spec = demo_spec()
    cohort, truth = generate(spec, 0)
    assert cohort.attribute_schema == {"insurance", "english", "chronic_illness"}
    ins = np.array(cohort.attribute_values("insurance"))
    assert (ins[truth == 0] == "medicaid").mean() > (ins[truth == 1] == "medicaid").mean()


@pytest.mark.parametrize(
    "over",
    [dict(weight=0.0), dict(spread=0.0), dict(acc_a=1.5), dict(sev_std=0.0), dict(frac_a=1.0), dict(sev_mean_b=-1.0),
     dict(mean=[0.0])],
)
def test_invalid_specs(over):
    with pytest.raises(ValueError):
        one_component(**over)


def test_zero_n_rejected():
    doc = {"n": 0, "dim": 2, "components": []}
    with pytest.raises(ValueError):
        SyntheticSpec.from_dict(doc)


def test_load_spec(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"n": 10, "dim": 1, "components": [
        {"weight": 1, "mean": [0], "spread": 1, "acc_a": 0.5, "acc_b": 0.5,
         "sev_mean_a": 1, "sev_mean_b": 1, "sev_std": 1, "frac_a": 0.5}]}))
    assert load_spec(path).n == 10
    path.write_text("{}")
    with pytest.raises(ValueError):
        load_spec(path)


def test_recall_score():
    truth = np.array([0] * 100 + [1] * 100)
    assignment = np.array([0] * 100 + [1] * 100)
    assert recall_score([0], assignment, truth, 0) == (1.0, 1.0)
    assert recall_score([], assignment, truth, 0) == (0.0, 0.0)
    # 70 of 100 planted captured among 140 flagged instances
    assignment = np.array([0] * 70 + [1] * 30 + [0] * 70 + [1] * 30)
    assert recall_score([0], assignment, truth, 0) == (0.70, 0.50)
    with pytest.raises(ValueError):
        recall_score([0], assignment, truth, 7)
