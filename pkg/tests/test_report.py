import numpy as np
import pytest
from hypothesis import given, strategies as st

from paramhom.report import ConvergenceReport, NonPositiveData, fit_rate


def test_exact_square_law():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, icpt, res = fit_rate(x, x ** 2)
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert icpt == pytest.approx(0.0, abs=1e-12)
    assert res < 1e-12


def test_square_root_law_intercept():
    x = np.array([0.5, 0.25, 0.125, 0.0625])
    slope, icpt, _ = fit_rate(x, 3 * x ** 0.5)
    assert slope == pytest.approx(0.5, abs=1e-12)
    assert icpt == pytest.approx(np.log(3.0), abs=1e-12)


def test_noisy_data_reports_residual():
    rng = np.random.default_rng(1)
    x = np.geomspace(1, 100, 8)
    y = x ** -1.5 * np.exp(0.1 * rng.standard_normal(8))
    slope, _, res = fit_rate(x, y)
    assert abs(slope + 1.5) < 0.2
    assert res > 0


@pytest.mark.parametrize("y", [[1.0, 0.0, 2.0], [1.0, -1.0, 2.0], [1.0, np.nan, 2.0]])
def test_nonpositive_data_rejected(y):
    with pytest.raises(NonPositiveData):
        fit_rate([1.0, 2.0, 3.0], y)


def test_two_points_rejected():
    with pytest.raises(ValueError):
        fit_rate([1.0, 2.0], [1.0, 2.0])


@given(st.floats(-4, 4), st.floats(0.01, 100))
def test_power_law_recovered(s, c):
    x = np.geomspace(0.01, 1, 5)
    slope, icpt, _ = fit_rate(x, c * x ** s)
    assert slope == pytest.approx(s, abs=1e-9)
    assert icpt == pytest.approx(np.log(c), abs=1e-9)


def test_csv_format(tmp_path):
    rep = ConvergenceReport(["N", "error", "ok"])
    rep.add(1, 0.5, True)
    rep.add(N=2, error=0.25, ok=False)
    path = tmp_path / "r.csv"
    rep.to_csv(path, {"config_hash": "abc"}, columns=["error", "N"])
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.decode("utf-8") == "error,N,config_hash\n0.5,1,abc\n0.25,2,abc\n"


def test_row_validation_and_sorting():
    rep = ConvergenceReport(["a", "b"])
    with pytest.raises(ValueError):
        rep.add(1)
    with pytest.raises(ValueError):
        rep.add(a=1)
    rep.add(3, 1.0)
    rep.add(1, 2.0)
    assert rep.sorted_by("a").column("a").tolist() == [1, 3]
    rep.set_column("b", 0.0)
    assert rep.column("b").tolist() == [0.0, 0.0]
