import json
import math

import pytest

import ensloss


def test_box_cox_round_trip():
    assert ensloss.inv_box_cox(2.0, 0.5) == pytest.approx(4.0)
    assert ensloss.box_cox(math.e, 0.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ensloss.inv_box_cox(0.0, -1.0)


def test_losses_and_certificate():
    assert "hinge_log_tail" in ensloss.builtin_loss_names()
    assert ensloss.loss_value("logistic", 0.0) == pytest.approx(math.log(2))
    cert = json.loads(ensloss.check_loss("hinge_log_tail"))
    assert cert["bounded_below"] is False
    assert json.loads(ensloss.check_loss("hinge"))["calibrated"] is True
    with pytest.raises(ValueError):
        ensloss.loss_value("nope", 0.0)


def test_generator_certifies_and_reconstructs():
    margins = [0.5, -0.2, 1.5, 3.0, 0.5]
    derivs, certified = ensloss.generate_rc_derivatives(margins, seed=3)
    assert certified
    assert max(derivs) < 0
    assert derivs[0] == derivs[4]
    assert ensloss.certify_rc(margins, derivs)[0]
    loss = ensloss.reconstruct_loss(margins, derivs)
    assert all(loss.derivative(z) == g for z, g in zip(margins, derivs))
    assert loss.calibrated() and loss.bounded_below()
    got = ensloss.assign_rc_derivatives([0.5, -0.2, 1.5], [-0.1, -2.0, -0.7])
    assert got == pytest.approx([-0.7, -2.0, -0.1 / 1.5])


def test_psi_closed_form():
    mix = [("exponential", 0.5), ("logistic2z", 0.5)]
    t = 0.6
    closed = 0.5 * (1 - math.sqrt(1 - t * t)) + 0.25 * ((1 - t) * math.log(1 - t) + (1 + t) * math.log(1 + t))
    assert ensloss.psi_transform(mix, t) == pytest.approx(closed, abs=1e-6)
    assert ensloss.excess_risk_bound(mix, 100.0) == 1.0


def test_train_is_deterministic():
    settings = {"mode": "ensloss", "data": "blobs:n=300", "epochs": "3", "hidden": "8", "seed": "2"}
    a = ensloss.train(settings)
    b = ensloss.train(settings)
    assert a["rows"] == b["rows"]
    assert a["checkpoint"] == b["checkpoint"]
    assert len(a["rows"]) == 3
    assert a["all_batches_certified"]
    with pytest.raises(ValueError):
        ensloss.train({"mode": "fixed:unknownloss"})


def test_data_and_stats():
    d = ensloss.load_data("blobs:n=200,d=3", seed=1)
    assert d["X_train"].shape == (150, 3)
    assert ensloss.accuracy([1.0, -1.0], [1.0, -1.0]) == 1.0
    r = ensloss.paired_t_test([0.9, 0.92, 0.91, 0.93, 0.90], [0.85, 0.86, 0.84, 0.88, 0.85])
    assert r["verdict"] == "better"
    assert r["p_value"] == pytest.approx(7.550570111090027e-05, abs=1e-10)
