"""End-to-end acceptance criteria 1-10, one test each.

Each test prints a single ``criterion k: PASS|FAIL`` line (collected again in
the terminal summary) before asserting.  Several take minutes on one core.
"""

import math

import numpy as np
import pytest

from difflab import fokker_planck as fp
from difflab import leading_order as lo
from difflab import metrics, noise, oracle
from difflab import samplers as smp
from difflab import schedule as sch
from difflab import score_match as sm
from difflab.scores import Gaussian1D, Perturbation, PerturbedScore, case_mask, gmm2d_four_mode

pytestmark = pytest.mark.slow

UNIT = sch.ScheduleParams.unit(2.0)

# histogram KL of 10^5 exact N(0, 0.25) samples against exact bin masses,
# 100 bins: mean 4.7e-4, sd 6.4e-5 over seeds; pinned at mean + ~3.5 sd
MC_KL_FLOOR = 7e-4


def _rel(a, b):
    return abs(a / b - 1)


def test_c1_table(report):
    printed = {1: (0.2567, 0.02), 2: (0.3032, 0.02), 3: (0.0658, 0.03)}
    got, ok = {}, True
    for case, (ref, tol) in printed.items():
        got[case] = oracle.leading_L(oracle.OracleSpec.unit(0.2, 20.0, case_mask(case)), oracle.TABLE_EPS_GRID).L
        ok &= _rel(got[case], ref) <= tol
    row = [oracle.leading_L(oracle.OracleSpec.unit(s, 20.0, case_mask(1)), oracle.TABLE_EPS_GRID).L for s in (0.2, 0.4, 0.6, 0.8)]
    spread = (max(row) - min(row)) / np.mean(row)
    ok &= spread < 0.01
    detail = "L = " + ", ".join(f"case {c}: {v:.5f}" for c, v in got.items()) + f"; sigma0 spread {spread:.2%}"
    assert report(1, ok, detail)


def test_c2_decay(report):
    hsq = [4.0, 7.0, 10.0, 14.0, 20.0]
    mask = case_mask(4)
    ok, parts = True, []
    for sigma0 in (0.2, 0.5):
        prob = lo.GaussProblem(sigma0, mask)
        for src in ("oracle", "pde"):
            h, L = lo.sweep_h(prob, hsq, src).series("L", src)
            f = lo.fit_decay(h, L)
            good = len(h) == len(hsq) and f.slope < 0 and f.r2 > 0.99
            ok &= good
            parts.append(f"s0={sigma0} {src}: slope {f.slope:.4f} R2 {f.r2:.5f}")
    assert report(2, ok, "; ".join(parts))


def test_c3_terminal_reversal(report):
    mask = case_mask(5, 0.995)
    ok, parts = True, []
    for sigma0 in (0.2, 0.5):
        prob = lo.GaussProblem(sigma0, mask)
        for src in ("oracle", "pde"):
            h, L = lo.sweep_h(prob, lo.DEFAULT_HSQ_GRID, src).series("L", src)
            assert h[0] == 0.0 and len(h) == len(lo.DEFAULT_HSQ_GRID)
            good = bool(np.all(L[h >= 1] > L[0]))
            ok &= good
            parts.append(f"s0={sigma0} {src}: L(0)={L[0]:.4g} min L(h>=1)={L[h >= 1].min():.4g}")
    assert report(3, ok, "; ".join(parts))


def test_c4_plateau(report):
    est = {}
    for case in (1, 3):
        h, L = lo.sweep_h(lo.GaussProblem(0.2, case_mask(case)), lo.DEFAULT_HSQ_GRID, "oracle").series("L")
        est[case] = lo.plateau_estimate(h, L)
    bound = lo.t_bound_gaussian(0.2)
    ratio = est[3].value / est[1].value
    ok = (not est[1].unreliable) and est[1].value <= 1.0 and est[1].value <= bound * (1 + 1e-6) and 0.20 <= ratio <= 0.32
    assert report(4, ok, f"T(case 1) = {est[1].value:.5f} (bound {bound:.5f}), T(case 3)/T(case 1) = {ratio:.4f}")


def test_c5_triangle(report):
    sigma0, hsq, eps = 0.5, 5.0, 0.02
    mask = case_mask(1)
    spec = oracle.OracleSpec.unit(sigma0, hsq, mask, eps)
    kl_or = oracle.kl_exact(spec)
    grid = fp.default_grid(sigma0, hsq, 2.0)
    kl_pde = eps**2 * fp.leading_L_fp(Gaussian1D(sigma0), Perturbation(0.0, mask), hsq, grid).L
    n, steps = 100000, 40000
    cfg = smp.SamplerConfig(steps=steps, batch=n, seed=0, alpha=math.sqrt(hsq), init="exact_pT")
    y = smp.simulate_reverse_em(PerturbedScore(Gaussian1D(sigma0), Perturbation(eps, mask)), UNIT, cfg).terminal_samples[:, 0]
    edges = lo.reference_edges(sigma0, n, 0)
    kl_mc = metrics.hist_kl(None, y, edges=edges, p_bins=Gaussian1D(sigma0).bin_probabilities(edges[0]))

    def close(a, b, floor=0.0):
        return abs(a - b) <= 0.05 * max(abs(a), abs(b)) + floor

    ok = close(kl_or, kl_pde) and close(kl_or, kl_mc, MC_KL_FLOOR) and close(kl_pde, kl_mc, MC_KL_FLOOR)
    # the variance resolves the eps effect that the KL floor hides
    v_or = oracle.var_YT(spec)
    tol = 3 * v_or * math.sqrt(2 / n) + 0.25 * (1 + hsq) * 2.0 / steps
    ok &= abs(y.var() - v_or) <= tol
    detail = f"KL oracle {kl_or:.4e}, PDE {kl_pde:.4e}, MC {kl_mc:.4e} (floor {MC_KL_FLOOR:g}); var EM {y.var():.5f} vs {v_or:.5f} +- {tol:.1e}"
    assert report(5, ok, detail)


def test_c6_fp_invariants(report):
    m = Gaussian1D(0.5)
    drift = max(fp.mass_drift_rate(m, h, fp.default_grid(0.5, h, 2.0, n=800)) for h in (0.0, 1.0, 20.0))
    from test_fokker_planck import SEMIGROUP_FIXTURE

    defects = [fp.semigroup_check(m, 1.0, fp.Grid1D(8.0, n, dt), 0.0, 2.0 / 3, 2.0) for n, dt in ((400, 4e-3), (800, 2e-3), (1600, 1e-3))]
    mass = max(
        abs(fp.evolve_perturbation(m, Perturbation(0.0, case_mask(c)), 2.0, fp.default_grid(0.5, 2.0, 2.0, n=800), project=False).mass) for c in range(1, 6)
    )
    ok = drift <= 1e-10 and defects[1] < SEMIGROUP_FIXTURE and defects[0] > defects[1] > defects[2] and mass <= 1e-8
    detail = f"mass drift {drift:.1e}/unit time; semigroup {defects[0]:.2e} > {defects[1]:.2e} > {defects[2]:.2e}; |int v_T| {mass:.1e}"
    assert report(6, ok, detail)


def _ranking_change_ok(a, b):
    """Rankings equal or differing by one adjacent swap."""
    ra, rb = np.argsort(np.argsort(a)), np.argsort(np.argsort(b))
    diff = np.flatnonzero(ra != rb)
    if diff.size == 0:
        return True
    if diff.size != 2:
        return False
    i, j = diff
    return abs(ra[i] - ra[j]) == 1 and ra[i] == rb[j] and ra[j] == rb[i]


def test_c7_gmm2d_trend(report):
    model = gmm2d_four_mode()
    score = PerturbedScore(model, Perturbation(0.2, case_mask(1)))
    alphas = [0.0, 0.5, 1.0, 1.5, 2.0]
    n = 10000
    ref = model.sample(0.0, noise.normals(0, noise.INIT_WEIGHTS + 7, 0, n, 2), noise.uniforms(0, noise.INIT_WEIGHTS + 8, 0, n)[:, 0])
    ys = []
    for a in alphas:
        cfg = smp.SamplerConfig(steps=80000, batch=n, seed=0, alpha=a, init="exact_pT")
        ys.append(smp.simulate_reverse_em(score, model.params, cfg).terminal_samples)
    ok, parts = True, []
    for axis in (0, 1):
        marg = model.marginal(axis)
        kls = {}
        for bins in (100, 200):
            edges = metrics.histogram_edges(ref[:, axis], bins)
            pb = marg.bin_probabilities(edges[0])
            kls[bins] = [metrics.hist_kl(None, y[:, axis], edges=edges, p_bins=pb) for y in ys]
        rho = metrics.spearman(alphas, kls[100])
        stable = _ranking_change_ok(kls[100], kls[200])
        ok &= rho <= -0.8 and stable
        parts.append(f"x{axis}: KL {' '.join(f'{k:.3g}' for k in kls[100])} spearman {rho:.2f} bins-stable {stable}")
    assert report(7, ok, "; ".join(parts))


def test_c8_schemes(report):
    sigma0 = 0.5
    score = PerturbedScore(Gaussian1D(sigma0))
    # (i) alpha = 0 EI is the noise-free recursion
    cfg = smp.SamplerConfig(scheme="exponential_integrator", steps=200, batch=2000, seed=1, alpha=0.0, init="exact_pT")
    a = smp.simulate_reverse_ei(score, UNIT, cfg).terminal_samples
    y = smp._initial(score, cfg, 0, 2000)
    d = UNIT.T / 200
    for k in range(200):
        gam = smp.ei_gamma(UNIT, k * d, d)
        y = gam * y + (gam - 1) * score(k * d, y)
    det = np.array_equal(a, y)
    # (ii) terminal variance error at 200 steps, common random numbers
    n = 400000
    err = {}
    for scheme in smp.SCHEMES:
        c = smp.SamplerConfig(scheme=scheme, steps=200, batch=n, seed=2, alpha=1.0, init="exact_pT")
        err[scheme] = abs(smp.simulate(score, UNIT, c).terminal_samples.var() - sigma0**2)
    ei_wins = err["exponential_integrator"] < err["euler_maruyama"]
    # (iii) exact score, eps = 0: KL under the floor
    edges = lo.reference_edges(sigma0, 100000, 0)
    pb = Gaussian1D(sigma0).bin_probabilities(edges[0])
    kls = []
    for alpha in (0.0, 1.0, 2.0):
        c = smp.SamplerConfig(steps=2000, batch=100000, seed=3, alpha=alpha, init="exact_pT")
        kls.append(metrics.hist_kl(None, smp.simulate_reverse_em(score, UNIT, c).terminal_samples[:, 0], edges=edges, p_bins=pb))
    floor_ok = max(kls) < MC_KL_FLOOR
    ok = det and ei_wins and floor_ok
    detail = (
        f"EI alpha=0 deterministic {det}; var error EI {err['exponential_integrator']:.3e} vs EM {err['euler_maruyama']:.3e} "
        f"(EI better: {ei_wins}); exact-score KL {', '.join(f'{k:.1e}' for k in kls)} < {MC_KL_FLOOR:g}: {floor_ok}"
    )
    assert report(8, ok, detail)


VP = sch.ScheduleParams(0.1, 20.0, 1.0)


def _sample_trained(model, alpha, n=10000, steps=20000):
    cfg = smp.SamplerConfig(steps=steps, batch=n, seed=5, alpha=alpha, init="standard_normal", chunk=5000)
    return smp.simulate_reverse_em(PerturbedScore(model), VP, cfg).terminal_samples


def test_c9_score_matching(report):
    truth = sm.swiss_roll(noise.rng(99), 10000)
    models = {}
    for seed in (0, 1):
        for w in sm.WEIGHT_SCHEMES:
            models[seed, w] = sm.train_dsm(sm.swiss_roll, VP, w, sm.TrainConfig(seed=seed), 2).model
    # (a) trained vs untrained at alpha = 1
    untrained = sm.TrainedScore(sm.MLP.init(2, 0, T=VP.T), VP)
    w_un = metrics.w1_sliced_2d(_sample_trained(untrained, 1.0), truth)
    alphas = [0.0, 0.5, 1.0, 1.5, 2.0]
    w_tr = [metrics.w1_sliced_2d(_sample_trained(models[0, "default"], a), truth) for a in alphas]
    a_ok = w_tr[2] < 0.1 * w_un
    # (b) alpha trend
    rho = metrics.spearman(alphas, w_tr)
    b_ok = rho <= -0.6
    # (c) relative score-matching loss, top and bottom deciles of t
    t_grid = np.linspace(0.01 * VP.T, VP.T, 100)
    top, bot = {}, {}
    for w in ("noise", "data"):
        tops, bots = [], []
        for seed in (0, 1):
            ev = sm.swiss_roll(noise.rng(seed, noise.INIT_WEIGHTS + 5), 5000)
            r = sm.relative_sml(models[seed, w], models[seed, "default"], VP, t_grid, ev, seed)
            tops.append(r[-10:].mean())
            bots.append(r[:10].mean())
        top[w], bot[w] = np.mean(tops), np.mean(bots)
    c_ok = top["noise"] < 1 < bot["noise"] and top["data"] > 1
    ok = a_ok and b_ok and c_ok
    detail = (
        f"(a) W1 trained {w_tr[2]:.4f} vs untrained {w_un:.4g}: {a_ok}; "
        f"(b) W1 by alpha {' '.join(f'{v:.4f}' for v in w_tr)} spearman {rho:.2f}: {b_ok}; "
        f"(c) noise top {top['noise']:.3f} bottom {bot['noise']:.3f}, data top {top['data']:.3f}: {c_ok}"
    )
    assert report(9, ok, detail)


def test_c10_weight_ratios(report):
    t = np.linspace(0.001, 1.0, 1000)
    w = sch.varpi(VP, t)
    d = sm.weight("default", VP, t)
    r_noise = sm.weight("noise", VP, t) / d
    r_data = sm.weight("data", VP, t) / d
    e1 = np.max(np.abs(r_noise - w) / w)
    e2 = np.max(np.abs(r_data - 1 / (0.25 + w)) * (0.25 + w))
    ok = e1 <= 1e-12 and e2 <= 1e-12 and np.all(np.diff(r_noise) > 0) and np.all(np.diff(r_data) < 0)
    assert report(10, ok, f"max rel error {max(e1, e2):.1e}; noise/default increasing, data/default decreasing")


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(pytest.main([__file__, "-q"]))
