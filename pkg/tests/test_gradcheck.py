import numpy as np
import pytest

from hsitrack.numeric import GradCheckError, Var, grad_check, log, param, square, sum_
from hsitrack.numeric.gradcheck import rel_error
from hsitrack.tokenizer import TokenGrid, compute_alpha, fuse_tokens, init_fusion
from hsitrack.numeric import attention_block, init_block, linear_apply, mean


def test_quadratic_passes_tightly(rng):
    w = param(rng.normal(size=(3, 4)))
    rep = grad_check(lambda: sum_(square(w)), {"w": w}, tol=1e-8, floor=1e-12)
    assert rep.passed, rep.summary()
    assert rep.probes == {"w": 12}


def test_nan_raises_diagnostic_error():
    w = param(np.array([-1.0, 2.0]))
    with pytest.raises(GradCheckError, match="non-finite"):
        grad_check(lambda: sum_(log(w)), {"w": w})


def test_nan_during_probe_names_the_block():
    w = param(np.array([1e-7, 2.0]))
    with pytest.raises(GradCheckError, match=r"w\[0\]"):
        grad_check(lambda: sum_(log(w)), {"w": w}, eps=1e-5)


def test_wrong_gradient_is_caught():
    from hsitrack.numeric.tape import _record

    def bad_square(x):
        out = Var(x.value ** 2)
        return _record(out, (x,), lambda g: x._accum(3 * x.value * g))

    w = param(np.array([1.0, 2.0]))
    rep = grad_check(lambda: sum_(bad_square(w)), {"w": w})
    assert not rep.passed
    assert "FAIL" in rep.summary()


def test_sampled_probes_and_directional_check(rng):
    w = param(rng.normal(size=(20, 20)))
    rep = grad_check(lambda: sum_(square(square(w))), {"w": w}, max_probes=7, directional=True)
    assert rep.probes["w"] == 7
    assert rep.directional_error is not None and rep.passed


def test_rel_error_floor():
    assert rel_error(0.0, 1e-10, 1e-4) == pytest.approx(1e-6)
    assert rel_error(2.0, 1.0, 1e-4) == pytest.approx(0.5)


def test_fuse_backbone_loss_composite(rng):
    d, m = 8, 4
    fusion = init_fusion(rng, d, max_bands=3, p=2, gate_mode="content")
    fusion.gate_w.value = rng.normal(0, 0.3, fusion.gate_w.shape)
    block = init_block(rng, d)
    z_fc, z_hsi = param(rng.normal(size=(m, d))), param(rng.normal(size=(m, d)))
    target = rng.normal(size=(m, d))

    def f():
        a, b = TokenGrid(z_fc, 2, 2), TokenGrid(z_hsi, 2, 2)
        fused = fuse_tokens(a, b, compute_alpha(a, b, fusion))
        out = attention_block(fused.tokens, block, heads=2)
        return mean(square(out - target))

    params = {"z_fc": z_fc, "z_hsi": z_hsi, "gate.W": fusion.gate_w, "gate.b": fusion.gate_b, **block}
    rep = grad_check(f, params, tol=1e-4)
    assert rep.passed, rep.summary()
