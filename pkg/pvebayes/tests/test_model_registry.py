import pytest

from pvebayes.model_registry import model_registry, fit_model, \
    show_model_registry
from pvebayes.mixture import PriorFit
from pvebayes.tables import ContingencyTable


def _table():
    return ContingencyTable([[44, 3, 9], [2, 8, 30], [12, 40, 900]])


def test_registry_entries():
    for name in ["general-gamma", "k-gamma", "km", "efron", "2-gamma",
                 "2-gamma-zi", "single-gamma", "bcpnn"]:
        assert name in model_registry
        spec = model_registry[name]
        assert spec["e_estimator"] in ("natural", "reference")
    assert model_registry["km"]["e_estimator"] == "reference"
    assert model_registry["bcpnn"]["fdr_adjust"]
    assert not model_registry["bcpnn"]["lambda_posterior"]
    assert model_registry.get("lasso") is None
    with pytest.raises(KeyError):
        model_registry["lasso"]


def test_show_model_registry(capsys):
    show_model_registry()
    out = capsys.readouterr().out
    for name in model_registry.keys():
        assert f"{name}:" in out


def test_fit_model():
    table = _table()
    stats, E = fit_model("bcpnn", table)
    assert E.kind == "natural"
    assert stats.prob_signal().shape == table.shape
    fit, E = fit_model("single-gamma", table, e_estimator="reference",
                       alpha=None)
    assert isinstance(fit, PriorFit)
    assert E.kind == "reference"
    with pytest.raises(ValueError):
        fit_model("km", table, alpha=0.5)
    with pytest.raises(KeyError):
        fit_model("lasso", table)
