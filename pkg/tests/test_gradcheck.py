import numpy as np
import pytest

from divcolor import cli
from divcolor import gradcheck
from divcolor.autograd import Tensor
from divcolor.gradcheck import (
    SUITES,
    TOLERANCE,
    check_gradients,
    numerical_gradient,
    relative_error,
    run_suites,
)


def _square_with_rule(scale):
    def fn(x):
        def backward(g):
            return (g * scale * x.data,)

        return Tensor._make(x.data**2, (x,), "square", backward)

    return fn


def test_correct_rule_passes():
    x = np.random.default_rng(0).standard_normal(5)
    assert check_gradients(lambda t: _square_with_rule(2.0)(t).sum(), [x]) < 1e-8


def test_wrong_rule_is_caught():
    x = np.random.default_rng(0).standard_normal(5)
    assert check_gradients(lambda t: _square_with_rule(2.1)(t).sum(), [x]) > TOLERANCE


def test_numerical_gradient_of_known_function():
    x = np.array([1.0, -2.0, 0.5])
    num = numerical_gradient(lambda a: float((a**3).sum()), [x], 0)
    np.testing.assert_allclose(num, 3 * x**2, rtol=1e-8)


def test_relative_error_is_scale_free():
    a = np.array([1.0, 2.0])
    assert relative_error(a, a) == 0.0
    assert relative_error(1e6 * a, 1e6 * (a + 1e-3)) == pytest.approx(relative_error(a, a + 1e-3), rel=1e-6)


def test_suites_cover_every_module():
    assert set(SUITES) == {"conv", "losses", "mdn"}
    names = {op for suite in SUITES.values() for op in suite}
    for op in ("conv2d[im2col]", "conv2d[loops]", "batchnorm[train]", "bilinear_upsample", "L_mah", "L_hist", "L_grad", "KL",
               "mdn_loss_exact", "mdn_loss_min"):
        assert op in names


def test_run_suites_few_trials():
    results = run_suites("losses", trials=3)
    assert all(r.passed for r in results)
    assert [r.trials for r in results] == [3] * len(results)


def test_unknown_module():
    with pytest.raises(ValueError):
        run_suites("vision")


def test_broken_suite_fails_the_command(monkeypatch, capsys):
    broken = {"broken": {"square": lambda rng: (lambda t: _square_with_rule(3.0)(t).sum(),
                                                  [rng.standard_normal(3)], [0])}}
    monkeypatch.setattr(gradcheck, "SUITES", broken)
    assert cli.main(["gradcheck", "--module", "all", "--trials", "2"]) == 4
    assert "FAIL" in capsys.readouterr().out
