import math

import numpy as np
import pytest

from difflab import oracle
from difflab import samplers as smp
from difflab import schedule as sch
from difflab.errors import DivergenceError
from difflab.scores import Gaussian1D, Perturbation, PerturbedScore, case_mask, gmm2d_four_mode

UNIT = sch.ScheduleParams.unit(2.0)


def exact(sigma0=0.5, params=UNIT):
    return PerturbedScore(Gaussian1D(sigma0, params))


def test_forward_exact():
    m = Gaussian1D(0.5)
    x0 = np.linspace(-1, 1, 7)[:, None]
    assert np.array_equal(smp.simulate_forward_exact(m, UNIT, 0.0, 7, 0, x0=x0), x0)
    n = 100000
    t = 0.8
    y = smp.simulate_forward_exact(m, UNIT, t, n, 1, x0=np.zeros((n, 1)))
    w2 = sch.varpi(UNIT, t) ** 2
    assert abs(y.var() - w2) < 3 * w2 * math.sqrt(2 / n)
    y = smp.simulate_forward_exact(m, UNIT, t, n, 2)
    v = m.marginal_var(t)
    assert abs(y.var() - v) < 3 * v * math.sqrt(2 / n)


def test_stationary_em():
    cfg = smp.SamplerConfig(steps=4000, batch=100000, seed=1, alpha=1.0)
    y = smp.simulate_reverse_em(exact(1.0), UNIT, cfg).terminal_samples
    assert abs(y.var() - 1.0) < 3 * math.sqrt(2 / 1e5)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.0])
def test_em_exact_score_variance(alpha):
    cfg = smp.SamplerConfig(steps=4000, batch=100000, seed=2, alpha=alpha)
    y = smp.simulate_reverse_em(exact(0.5), UNIT, cfg).terminal_samples
    # 3 SE plus an O(dt) bias budget
    assert abs(y.var() - 0.25) < 3 * 0.25 * math.sqrt(2 / 1e5) + 0.25 * (1 + alpha**2) * 2.0 / 4000


def test_determinism_across_workers_and_chunks():
    sc = PerturbedScore(gmm2d_four_mode(), Perturbation(0.2, case_mask(1)))
    base = smp.SamplerConfig(steps=50, batch=1000, seed=9, alpha=1.0, chunk=1000, workers=1)
    a = smp.simulate_reverse_em(sc, sc.params, base).terminal_samples
    for chunk, workers in [(137, 1), (250, 3), (999, 2)]:
        cfg = smp.SamplerConfig(steps=50, batch=1000, seed=9, alpha=1.0, chunk=chunk, workers=workers)
        assert np.array_equal(a, smp.simulate_reverse_em(sc, sc.params, cfg).terminal_samples)
    ei = smp.SamplerConfig(scheme="exponential_integrator", steps=50, batch=1000, seed=9, alpha=1.0, chunk=300, workers=2)
    b = smp.simulate(sc, sc.params, ei).terminal_samples
    assert np.array_equal(b, smp.simulate(sc, sc.params, smp.SamplerConfig(scheme="exponential_integrator", steps=50, batch=1000, seed=9, alpha=1.0)).terminal_samples)


def test_ei_gamma_limits():
    p = sch.ScheduleParams(0.1, 20.0, 1.0)
    assert smp.ei_gamma(p, 0.3, 0.0) == 1.0
    # gamma equals exp(1/2 int g^2) over the step
    tk, d = 0.3, 0.01
    ib = sch.integrated_beta(p, p.T - tk) - sch.integrated_beta(p, p.T - tk - d)
    assert smp.ei_gamma(p, tk, d) == pytest.approx(math.exp(0.5 * ib), rel=1e-13)


def test_ei_alpha_zero_is_deterministic():
    sc = exact(0.5)
    cfg = smp.SamplerConfig(scheme="exponential_integrator", steps=100, batch=500, seed=1, alpha=0.0)
    a = smp.simulate_reverse_ei(sc, UNIT, cfg).terminal_samples
    # the same recursion with no noise term at all
    y = smp._initial(sc, cfg, 0, 500)
    d = UNIT.T / 100
    for k in range(100):
        gam = smp.ei_gamma(UNIT, k * d, d)
        y = gam * y + (gam - 1) * sc(k * d, y)
    assert np.array_equal(a, y)


def test_ei_single_step_near_identity():
    cfg = smp.SamplerConfig(scheme="exponential_integrator", steps=1, batch=10, seed=0, alpha=0.0, init="standard_normal")
    p = sch.ScheduleParams.unit(1e-6)
    y0 = smp._initial(PerturbedScore(Gaussian1D(0.5, p)), cfg, 0, 10)
    y = smp.simulate_reverse_ei(PerturbedScore(Gaussian1D(0.5, p)), p, cfg).terminal_samples
    assert np.max(np.abs(y - y0)) < 1e-5


def test_schemes_agree():
    sc = exact(0.5)
    n = 20000
    em = smp.simulate_reverse_em(sc, UNIT, smp.SamplerConfig(steps=2000, batch=n, seed=3)).terminal_samples[:, 0]
    ei = smp.simulate_reverse_ei(sc, UNIT, smp.SamplerConfig(scheme="exponential_integrator", steps=2000, batch=n, seed=4)).terminal_samples[:, 0]
    from difflab.metrics import w1_1d
    from difflab import noise

    ref_a = 0.5 * noise.normals(5, 0, 0, n)[:, 0]
    ref_b = 0.5 * noise.normals(6, 0, 0, n)[:, 0]
    assert w1_1d(em, ei) < 3 * w1_1d(ref_a, ref_b)


def test_divergence_error():
    def bad(t, y):
        return np.full_like(y, np.nan) if t > 0.5 else -y

    with pytest.raises(DivergenceError) as ei:
        smp.simulate_reverse_em(bad, UNIT, smp.SamplerConfig(steps=20, batch=10, init="standard_normal"))
    assert ei.value.step >= 5


def test_keep_paths_shape():
    cfg = smp.SamplerConfig(steps=10, batch=6, keep_paths=True)
    tb = smp.simulate_reverse_em(exact(), UNIT, cfg)
    assert tb.paths.shape == (11, 6, 1)
    assert np.array_equal(tb.paths[-1], tb.terminal_samples)


def test_config_validation():
    for kw in [dict(scheme="rk4"), dict(init="zeros"), dict(steps=0), dict(alpha=-1.0)]:
        with pytest.raises(ValueError):
            smp.SamplerConfig(**kw)


def test_csv_roundtrip(tmp_path):
    y = np.random.default_rng(0).normal(size=(50, 2))
    p = tmp_path / "s.csv"
    smp.write_samples_csv(p, y)
    assert p.read_text().splitlines()[0] == "x0,x1"
    assert np.array_equal(smp.read_samples_csv(p), y)


def test_em_matches_oracle_kl_small_eps():
    # eps = 0.02, case 1, alpha = 1, sigma0 = 0.2: sample variance vs oracle variance
    spec = oracle.OracleSpec.unit(0.2, 1.0, case_mask(1), 0.02)
    v = oracle.var_YT(spec)
    sc = PerturbedScore(Gaussian1D(0.2), Perturbation(0.02, case_mask(1)))
    y = smp.simulate_reverse_em(sc, UNIT, smp.SamplerConfig(steps=8000, batch=100000, seed=7)).terminal_samples
    assert abs(y.var() - v) < 3 * v * math.sqrt(2 / 1e5) + 2 * v * 2.0 / 8000


def exact_discrete_var(p, scheme, steps, alpha, sigma0):
    # both schemes are linear in y for a Gaussian score: var' = A^2 var + B^2
    m = Gaussian1D(sigma0, p)
    d = p.T / steps
    v = m.marginal_var(p.T)
    for k in range(steps):
        tk = k * d
        vv = m.marginal_var(p.T - tk)
        g2 = sch.g(p, p.T - tk) ** 2
        if scheme == "euler_maruyama":
            A = 1 + 0.5 * g2 * d - 0.5 * g2 * (1 + alpha**2) * d / vv
            B2 = alpha**2 * g2 * d
        else:
            gam = math.exp(0.5 * (sch.integrated_beta(p, p.T - tk) - sch.integrated_beta(p, p.T - tk - d)))
            A = gam - (1 + alpha**2) * (gam - 1) / vv
            B2 = alpha**2 * (gam * gam - 1)
        v = A * A * v + B2
    return v


@pytest.mark.parametrize("scheme", smp.SCHEMES)
@pytest.mark.parametrize("p", [UNIT, sch.ScheduleParams(0.1, 20.0, 1.0)])
def test_variance_matches_exact_recursion(scheme, p):
    n = 200000
    cfg = smp.SamplerConfig(scheme=scheme, steps=200, batch=n, seed=6, alpha=1.0, init="exact_pT")
    y = smp.simulate(exact(0.5, p), p, cfg).terminal_samples
    ref = exact_discrete_var(p, scheme, 200, 1.0, 0.5)
    assert abs(y.var() - ref) < 3 * ref * math.sqrt(2 / n)
