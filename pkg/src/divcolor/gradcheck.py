"""Central finite-difference checks of reverse-mode gradients.

``run_suites`` drives randomized trials for every differentiable operation
and loss; the ``gradcheck`` CLI subcommand is a thin wrapper around it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .autograd import Tensor
from .colorspace import build_histogram
from .losses import LossWeights, loss_dec, loss_grad, loss_hist, loss_kl, loss_l2, loss_mah
from .mdn import GmmParams, mdn_loss_exact, mdn_loss_min
from .pca import fit as fit_pca

STEP = 1e-5
TOLERANCE = 1e-4


def numerical_gradient(fn: Callable[..., float], inputs: Sequence[np.ndarray], which: int,
                       h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``fn(*inputs)`` w.r.t. ``inputs[which]``."""
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    target = arrays[which]
    grad = np.zeros_like(target)
    flat, gflat = target.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(*arrays)
        flat[i] = orig - h
        down = fn(*arrays)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), zero when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], wrt: Sequence[int] | None = None,
                    h: float = STEP, rng: np.random.Generator | None = None) -> float:
    """Largest relative error between tape and finite-difference gradients.

    ``fn`` maps Tensors to a Tensor; non-scalar outputs are contracted with a
    fixed random vector first.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    wrt = range(len(inputs)) if wrt is None else wrt
    probe = None

    def scalar(*arrays, tape=False):
        nonlocal probe
        ts = [Tensor(a, requires_grad=tape and i in wrt) for i, a in enumerate(arrays)]
        out = fn(*ts)
        if out.size != 1:
            if probe is None:
                probe = rng.standard_normal(out.shape)
            out = (out * probe).sum()
        return out, ts

    out, ts = scalar(*inputs, tape=True)
    out.backward()
    worst = 0.0
    for i in wrt:
        numeric = numerical_gradient(lambda *a: scalar(*a)[0].item(), inputs, i, h)
        analytic = ts[i].grad if ts[i].grad is not None else np.zeros_like(numeric)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


@dataclass
class SuiteResult:
    name: str
    trials: int
    max_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


# each case: rng -> (fn, inputs, wrt)


def _conv_case(method):
    def case(rng):
        n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.integers(1, 4))
        size = int(rng.integers(k, 7))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        x = rng.standard_normal((n, c, size, size))
        w = rng.standard_normal((o, c, k, k))
        b = rng.standard_normal(o)
        return (lambda x, w, b: F.conv2d(x, w, stride, pad, bias=b, method=method)), [x, w, b], None
    return case


def _upsample_case(rng):
    x = rng.standard_normal((int(rng.integers(1, 3)), 2, int(rng.integers(1, 4)), int(rng.integers(1, 4))))
    factor = int(rng.integers(1, 4))
    return (lambda x: F.bilinear_upsample(x, factor)), [x], None


def _batchnorm_case(mode):
    def case(rng):
        # two values per channel normalise to +-1 and leave only an eps-sized gradient
        spatial = (2, 2) if rng.random() < 0.5 else ()
        shape = (int(rng.integers(2 if spatial else 3, 5)), int(rng.integers(1, 4))) + spatial
        x = rng.standard_normal(shape) * 2.0 + 0.5
        gamma = rng.standard_normal(shape[1])
        beta = rng.standard_normal(shape[1])
        stats = F.RunningStats(shape[1])
        stats.mean = rng.standard_normal(shape[1])
        stats.var = rng.uniform(0.5, 2.0, shape[1])
        return (lambda x, g, b: F.batchnorm(x, g, b, mode, None if mode == "train" else stats)), [x, gamma, beta], None
    return case


def _fc_case(rng):
    n, i, o = (int(v) for v in rng.integers(1, 5, 3))
    return F.fully_connected, [rng.standard_normal((n, i)), rng.standard_normal((i, o)), rng.standard_normal(o)], None


def _unary_case(op):
    def case(rng):
        x = rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(2, 6))))
        return op, [x], None
    return case


def _fields(rng, n=None, size=None):
    n = n or int(rng.integers(1, 3))
    size = size or int(rng.integers(2, 5))
    return np.tanh(rng.standard_normal((n, size, size, 2)))


def _mah_case(rng):
    corpus = _fields(rng, 12, 3)
    basis = fit_pca(corpus, int(rng.integers(1, 6)))
    pred, target = _fields(rng, 2, 3), _fields(rng, 2, 3)
    return (lambda p: loss_mah(p, target, basis)), [pred], None


def _hist_case(rng):
    target = _fields(rng)
    hist = build_histogram(np.concatenate([target, _fields(rng, 3, target.shape[1])]))
    pred = _fields(rng, len(target), target.shape[1])
    return (lambda p: loss_hist(p, target, hist)), [pred], None


def _grad_case(rng):
    target = _fields(rng)
    pred = _fields(rng, len(target), target.shape[1])
    return (lambda p: loss_grad(p, target)), [pred], None


def _l2_case(rng):
    target = _fields(rng)
    return (lambda p: loss_l2(p, target)), [_fields(rng, len(target), target.shape[1])], None


def _dec_case(rng):
    corpus = _fields(rng, 10, 3)
    basis = fit_pca(corpus, 3)
    hist = build_histogram(corpus)
    target = _fields(rng, 2, 3)
    weights = LossWeights(*rng.uniform(0.0, 1.0, 3))
    return (lambda p: loss_dec(p, target, basis, hist, weights)), [_fields(rng, 2, 3)], None


def _kl_case(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 6)))
    return loss_kl, [rng.standard_normal(shape), rng.standard_normal(shape)], None


def _mdn_case(loss):
    def case(rng):
        n, m, d = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
        logits = rng.standard_normal((n, m))
        mu = rng.standard_normal((n, m, d))
        z = rng.standard_normal((n, d))
        s2 = float(rng.uniform(0.05, 1.0))

        def fn(logits, mu, z):
            return loss(GmmParams(F.softmax(logits, 1), mu, s2, F.log_softmax(logits, 1)), z)

        return fn, [logits, mu, z], None
    return case


SUITES: dict[str, dict[str, Callable]] = {
    "conv": {
        "conv2d[im2col]": _conv_case("im2col"),
        "conv2d[loops]": _conv_case("loops"),
        "bilinear_upsample": _upsample_case,
        "batchnorm[train]": _batchnorm_case("train"),
        "batchnorm[eval]": _batchnorm_case("eval"),
        "fully_connected": _fc_case,
        "relu": _unary_case(F.relu),
        "tanh": _unary_case(F.tanh),
        "softmax": _unary_case(lambda x: F.softmax(x, axis=1)),
        "log_softmax": _unary_case(lambda x: F.log_softmax(x, axis=1)),
        "logsumexp": _unary_case(lambda x: F.logsumexp(x, axis=1)),
    },
    "losses": {
        "L_mah": _mah_case,
        "L_hist": _hist_case,
        "L_grad": _grad_case,
        "L_dec": _dec_case,
        "L_l2": _l2_case,
        "KL": _kl_case,
    },
    "mdn": {
        "mdn_loss_exact": _mdn_case(mdn_loss_exact),
        "mdn_loss_min": _mdn_case(mdn_loss_min),
    },
}


def run_suites(module: str = "all", trials: int = 100, seed: int = 0,
               report: Callable[[SuiteResult], None] | None = None) -> list[SuiteResult]:
    if module == "all":
        names = list(SUITES)
    elif module in SUITES:
        names = [module]
    else:
        raise ValueError(f"unknown gradcheck module {module!r}; choose all, {', '.join(SUITES)}")
    results = []
    for suite in names:
        for op, case in SUITES[suite].items():
            rng = np.random.default_rng([seed, len(results)])
            start = time.perf_counter()
            worst = 0.0
            for _ in range(trials):
                fn, inputs, wrt = case(rng)
                worst = max(worst, check_gradients(fn, inputs, wrt, rng=rng))
            res = SuiteResult(op, trials, worst, time.perf_counter() - start)
            results.append(res)
            if report:
                report(res)
    return results
