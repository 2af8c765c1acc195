import numpy as np
import pytest

from pathcalc import (
    asian_forward,
    black_scholes,
    cylinder,
    dyadic,
    follmer_integral_cylinder,
    follmer_integral_functional,
    generate,
    identity,
    ito_residual_cylinder,
    ito_residual_functional,
    left_cauchy_chain_rule,
    left_cauchy_integral,
    qv_along,
    stack,
)
from pathcalc.integration import follmer_integrand


def walk(level, seed=7, sigma=1.0):
    seq = dyadic(1.0, level)
    return generate({"kind": "scaled_random_walk", "sigma": sigma}, seed, seq), seq


def one_jump_step(level, t=0.5, height=1.0):
    seq = dyadic(1.0, level)
    path = generate(
        {"kind": "with_jumps",
         "base": {"kind": "smooth", "name": "linear", "scale": 0.0},
         "jumps": [[t, [height]]]},
        0, seq,
    )
    return path, seq


# ---------------------------------------------------------------------------
# Riemann sums
# ---------------------------------------------------------------------------

def test_identity_telescopes_exactly_at_every_level():
    path, seq = walk(10)
    rep = follmer_integral_functional(identity(), path, seq)
    probe_vals = path.values[path.grid_indices(rep.probe_times), 0]
    for n in rep.levels:
        # algebraic telescoping; allow eps-size float association dust
        assert np.max(np.abs(rep.sums[n] - (probe_vals - path.values[0, 0]))) < 1e-14
    assert rep.converged
    assert rep.limit[0] == 0.0  # value at t = 0


def test_constant_integrand_exact():
    path, seq = walk(8, seed=2)
    rep = follmer_integral_cylinder(lambda x: 3.0 + 0.0 * x, path, seq)
    probe_vals = path.values[path.grid_indices(rep.probe_times), 0]
    for n in rep.levels:
        assert np.allclose(rep.sums[n], 3.0 * (probe_vals - path.values[0, 0]), atol=1e-14)


def test_sums_are_linear_per_level():
    path, seq = walk(8, seed=4)
    f1 = follmer_integral_cylinder(lambda x: x, path, seq)
    f2 = follmer_integral_cylinder(lambda x: x * x, path, seq)
    combo = follmer_integral_cylinder(lambda x: 2.0 * x - 3.0 * x * x, path, seq)
    for n in combo.levels:
        assert np.allclose(combo.sums[n], 2.0 * f1.sums[n] - 3.0 * f2.sums[n], atol=1e-12)


def test_x_squared_ito_identity_limit():
    path, seq = walk(12)
    qv = qv_along(path, seq)
    rep = follmer_integral_functional(
        cylinder(lambda x: x * x, lambda x: 2 * x, vectorized=True), path, seq
    )
    lhs = path.values[-1, 0] ** 2 - path.values[0, 0] ** 2
    assert rep.limit[-1] == pytest.approx(lhs - qv.limit[-1], abs=1e-12)


def test_asian_gain_on_linear_path():
    seq = dyadic(1.0, 10)
    path = generate({"kind": "smooth", "name": "linear"}, 0, seq)
    rep = follmer_integral_functional(asian_forward(), path, seq)
    # integral of (T - t) dt = T^2 / 2, up to one mesh of quadrature
    assert rep.limit[-1] == pytest.approx(0.5, abs=2.0**-10 + 1e-12)


def test_cylinder_step_path_left_evaluation():
    path, seq = one_jump_step(8)
    rep = follmer_integral_cylinder(lambda x: 2.0 * x, path, seq)
    # the only nonzero increment is the jump cell, weighted by 2 x(pre-jump) = 0
    for n in rep.levels:
        assert np.array_equal(rep.sums[n], np.zeros_like(rep.sums[n]))
    qv = qv_along(path, seq)
    lhs = path.values[-1, 0] ** 2 - path.values[0, 0] ** 2
    assert lhs == rep.limit[-1] + qv.limit[-1]  # the jump mass carries everything


def test_cylinder_smooth_riemann_stieltjes():
    seq = dyadic(1.0, 10)
    path = generate({"kind": "smooth", "name": "linear"}, 0, seq)
    rep = follmer_integral_cylinder(lambda x: 2.0 * x, path, seq, probes=[0.5, 1.0])
    assert rep.limit[-1] == pytest.approx(1.0, abs=2.0**-9)
    assert rep.limit[0] == pytest.approx(0.25, abs=2.0**-9)


def test_wrong_evaluation_detector():
    # evaluating the integrand at the right endpoint instead of the left one
    # shifts the x^2 integral by twice the squared-increment sum
    path, seq = walk(10, seed=15)
    x = path.values[:, 0]
    rep = follmer_integral_cylinder(lambda v: 2.0 * v, path, seq, probes=[1.0])
    qv = qv_along(path, seq, probe_times=[1.0])
    for n in rep.levels:
        lv = x[path.grid_indices(seq.level(n))]
        wrong = float(np.sum(2.0 * lv[1:] * np.diff(lv)))
        assert wrong - rep.sums[n][0] == pytest.approx(2.0 * qv.approx[n][0], rel=1e-12)


def test_fast_and_loop_integrands_agree():
    seq = dyadic(1.0, 8)
    path = generate({"kind": "geometric_walk", "sigma": 0.3, "x0": 1.0}, 3, seq)
    F = black_scholes(0.2, 1.0)
    fast = follmer_integrand(F, path, seq, 6)
    F.pointwise_grad = None  # force the generic state-by-state route
    slow = follmer_integrand(F, path, seq, 6)
    assert np.max(np.abs(fast - slow)) < 1e-12


def test_integrand_uses_jump_perturbed_state():
    path, seq = one_jump_step(6)
    F = cylinder(lambda x: x * x, lambda x: 2 * x)
    g = follmer_integrand(F, path, seq, seq.top, mode="cadlag")
    i = int(np.searchsorted(seq.level(seq.top), 0.5))
    assert g[i, 0] == 2.0  # gradient at x(t_i) = left limit + jump = 1
    g_cont = follmer_integrand(F, path, seq, seq.top, mode="continuous")
    assert g_cont[i, 0] == 0.0  # no perturbation: left limit only


# ---------------------------------------------------------------------------
# change-of-variable residuals
# ---------------------------------------------------------------------------

def test_ito_functional_identity_is_exact():
    path, seq = walk(9, seed=5)
    rep = ito_residual_functional(identity(), path, seq)
    assert rep.residual == 0.0


def test_ito_functional_x_squared_small_and_decreasing():
    path, seq = walk(12, seed=7)
    F = cylinder(lambda x: x * x, lambda x: 2 * x, lambda x: 2.0 + 0.0 * x,
                 vectorized=True)
    residuals = {
        L: ito_residual_functional(F, path, seq, level=L).residual
        for L in [4, 8, 12]
    }
    lhs_scale = abs(path.values[-1, 0] ** 2) + 1.0
    assert residuals[12] < 1e-2 * lhs_scale
    assert residuals[12] < residuals[8] < residuals[4]


def test_ito_residual_level_sweep_net_decrease():
    # the non-anticipative sums close the identity as the level grows
    path, seq = walk(14, seed=3)
    F = cylinder(lambda x: x * x, lambda x: 2 * x, lambda x: 2.0 + 0.0 * x,
                 vectorized=True)
    for L in [12, 14]:
        r_hi = ito_residual_functional(F, path, seq, level=L).residual
        r_lo = ito_residual_functional(F, path, seq, level=L - 4).residual
        assert r_hi < r_lo


def test_ito_functional_cubic_on_step_path_closed_form():
    path, seq = one_jump_step(8)
    F = cylinder(lambda x: x**3, lambda x: 3 * x * x, lambda x: 6 * x)
    rep = ito_residual_functional(F, path, seq)
    assert rep.residual < 1e-10
    assert rep.jump_term == pytest.approx(1.0, abs=1e-15)
    assert rep.follmer_term == 0.0


def test_ito_cylinder_linear_exact():
    path, seq = walk(8, seed=8)
    rep = ito_residual_cylinder(lambda x: x, lambda x: 1.0, lambda x: 0.0, path, seq)
    assert rep.residual == 0.0


def test_ito_cylinder_x_squared_bounded_by_qv_metric():
    path, seq = walk(12, seed=9)
    rep = ito_residual_cylinder(lambda x: x * x, lambda x: 2 * x, lambda x: 2.0,
                                path, seq)
    # identity is exact at the top level; the bound is generous
    assert rep.residual <= max(rep.qv_metric, 1e-12)


def test_ito_cylinder_two_dim_product():
    path, seq = walk(10, seed=10)
    both = stack([path, path])
    rep = ito_residual_cylinder(
        lambda v: v[0] * v[1],
        lambda v: np.array([v[1], v[0]]),
        lambda v: np.array([[0.0, 1.0], [1.0, 0.0]]),
        both, seq,
    )
    assert rep.residual < 1e-12
    assert rep.qv_term == pytest.approx(qv_along(path, seq).limit[-1], rel=1e-12)


def test_jump_localization():
    path, seq = one_jump_step(7, t=0.25, height=2.0)
    F = cylinder(lambda x: x**3, lambda x: 3 * x * x, lambda x: 6 * x)
    rep = ito_residual_functional(F, path, seq)
    # F(s, x_s) - F(s, x_{s-}) - grad . dx = 8 - 0 - 0
    assert rep.jump_term == pytest.approx(8.0, abs=1e-15)


def test_ito_reports_qv_caveat():
    path, seq = walk(10, seed=11)
    F = cylinder(lambda x: x * x, lambda x: 2 * x, lambda x: 2.0, vectorized=True)
    rep = ito_residual_functional(F, path, seq)
    assert rep.qv_converged in (True, False)
    assert rep.qv_metric > 0


# ---------------------------------------------------------------------------
# left Cauchy integral and chain rule
# ---------------------------------------------------------------------------

def test_left_cauchy_constant_integrand():
    path, seq = walk(9, seed=12)
    rep = left_cauchy_integral(lambda g: 1.0, path, seq, [(0.25, 0.75), (0.0, 1.0)])
    x = path.values[:, 0]
    for k, (u, v) in enumerate(rep.intervals):
        expected = float(path.value(v)[0] - path.value(u)[0])
        for n, s in enumerate(rep.per_level[k]):
            assert s == pytest.approx(expected, abs=1e-12)


def test_left_cauchy_matches_cylinder_on_full_interval():
    seq = dyadic(1.0, 9)
    path = generate({"kind": "smooth", "name": "sine"}, 0, seq)
    rep = left_cauchy_integral(lambda g: 2.0 * g, path, seq, [(0.0, 1.0)])
    assert rep.follmer_gap is not None
    assert rep.follmer_gap < 1e-12


def test_left_cauchy_requires_nested():
    from pathcalc import PartitionSequence

    path, _ = walk(3)
    seq = PartitionSequence(
        1.0, [[0.0, 0.3, 1.0], [0.0, 0.5, 1.0]], dense=False, nested=False
    )
    with pytest.raises(ValueError):
        left_cauchy_integral(lambda g: g, path, seq, [(0.0, 1.0)])


def test_chain_rule_quadratic_exact_on_smooth():
    seq = dyadic(1.0, 9)
    path = generate({"kind": "smooth", "name": "sine"}, 0, seq)
    rep = left_cauchy_chain_rule(
        lambda y: y * y, lambda y: 2.0 * y, lambda y: 2.0, path, seq, (0.25, 1.0)
    )
    assert rep.residual < 1e-12


def test_chain_rule_accepts_scalar_only_callables():
    import math

    seq = dyadic(1.0, 8)
    path = generate({"kind": "smooth", "name": "sine", "amp": 0.3}, 0, seq)
    rep = left_cauchy_chain_rule(
        lambda y: math.exp(y), lambda y: math.exp(y), lambda y: math.exp(y),
        path, seq, (0.0, 1.0),
    )
    # exp chain rule closes to second order in the increments
    assert rep.residual < 1e-5


def test_chain_rule_with_interior_jump():
    path, seq = one_jump_step(8, t=0.5, height=1.5)
    rep = left_cauchy_chain_rule(
        lambda y: y * y, lambda y: 2.0 * y, lambda y: 2.0, path, seq, (0.25, 0.75)
    )
    assert rep.residual < 1e-12
    assert rep.left_jump_sum == pytest.approx(1.5**2, abs=1e-12)
    assert rep.right_jump_sum == 0.0
