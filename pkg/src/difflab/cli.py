"""Command line entry point.

Every subcommand resolves to a validated config, runs one experiment and
writes ``runs/<timestamp>-<hash>/`` holding the CSV (and SVG) artifacts, the
resolved ``config.toml`` and ``manifest.json`` with SHA-256 checksums.
``difflab run manifest.json`` repeats a recorded run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from typing import List, Optional

import numpy as np
import scipy

from . import __version__
from . import config as cfgmod
from . import fokker_planck as fp
from . import leading_order as lo
from . import metrics
from . import noise
from . import oracle
from . import plots
from . import samplers
from . import schedule as sch
from . import score_match as sm
from . import scores
from .errors import ConfigError

EXIT_USAGE = 2


def _f(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def write_csv(path, header: List[str], rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_f(v) for v in r])


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# experiments: each writes into ``out`` and returns the seeds it used


def _params(cfg) -> sch.ScheduleParams:
    s = cfgmod.section(cfg, "schedule")
    if not s:
        return sch.ScheduleParams.unit(2.0)
    return sch.ScheduleParams(float(s.get("beta0", 1.0)), float(s.get("beta1", 1.0)), float(s.get("T", 1.0)))


def _mask(sec):
    return scores.case_mask(int(sec.get("case", 1)), sec.get("mask_c"))


def run_oracle(cfg, out) -> dict:
    s = cfgmod.section(cfg, "oracle")
    sigma0, hsq, case = float(s.get("sigma0", 0.5)), float(s.get("hsq", 1.0)), int(s.get("case", 1))
    grid = tuple(float(e) for e in s.get("eps_grid", oracle.DEFAULT_EPS_GRID))
    spec = oracle.OracleSpec.unit(sigma0, hsq, _mask(s), 0.0, float(s.get("T", 2.0)))
    res = oracle.leading_L(spec, grid)
    kl_rows = [(hsq, sigma0, case, float(e), float(k)) for e, k in zip(res.eps, res.kl)]
    if "epsilon" in s and float(s["epsilon"]) not in grid:
        e = float(s["epsilon"])
        kl_rows.append((hsq, sigma0, case, e, oracle.kl_exact(spec.with_epsilon(e))))
    kl_rows.sort(key=lambda r: r[3])
    write_csv(os.path.join(out, "kl.csv"), ["hsq", "sigma0", "case", "epsilon", "kl"], kl_rows)
    write_csv(os.path.join(out, "leading_L.csv"), ["hsq", "sigma0", "case", "L", "r2"], [(hsq, sigma0, case, res.L, res.r2)])
    return {}


def run_fpsolve(cfg, out) -> dict:
    s = cfgmod.section(cfg, "fpsolve")
    sigma0, hsq = float(s.get("sigma0", 0.5)), float(s.get("hsq", 1.0))
    T = float(s.get("T", 2.0))
    grid = fp.default_grid(sigma0, hsq, T, n=int(s.get("grid_n", 2000)), dt=s.get("dt"))
    if "grid_R" in s:
        grid = fp.Grid1D(float(s["grid_R"]), grid.n, grid.dt)
    model = scores.Gaussian1D(sigma0, sch.ScheduleParams.unit(T))
    pert = scores.Perturbation(0.0, _mask(s))
    res = fp.evolve_perturbation(model, pert, hsq, grid, richardson=bool(s.get("richardson", True)))
    p0 = np.asarray(model.density(0.0, grid.x), dtype=float).reshape(grid.n)
    lead = fp.leading_L_pde(res.v, p0, grid)
    defect = fp.semigroup_check(model, hsq, grid, 0.0, T / 3, T)
    write_csv(os.path.join(out, "fpsolve.csv"), ["hsq", "L", "tail_mass", "defect"], [(hsq, lead.L, lead.tail_mass, defect)])
    write_csv(os.path.join(out, "v_T.csv"), ["x", "p0", "v"], zip(grid.x, p0, res.v))
    return {}


def _fit_rows(sigma0, source, hsq, L, fit_min):
    rows = []
    sel = hsq >= fit_min
    try:
        d = lo.fit_decay(hsq[sel], L[sel])
        rows.append((sigma0, source, "decay", d.slope, d.intercept, d.r2, float("nan"), d.flag))
    except ValueError as exc:
        rows.append((sigma0, source, "decay", float("nan"), float("nan"), float("nan"), float("nan"), str(exc)))
    if hsq.size >= 3:
        p = lo.plateau_estimate(hsq, L)
        r = p.rate
        rows.append((sigma0, source, "plateau", r.slope if r else float("nan"), r.intercept if r else float("nan"), r.r2 if r else float("nan"), p.value, ("unreliable: " if p.unreliable else "") + p.note))
    return rows


def run_sweep(cfg, out) -> dict:
    s = cfgmod.section(cfg, "sweep")
    sig = s.get("sigma0", [0.5])
    sigmas = [float(v) for v in (sig if isinstance(sig, list) else [sig])]
    sources = [str(v) for v in s.get("sources", ["oracle"])]
    for src in sources:
        if src not in lo.SOURCES:
            raise ConfigError(f"sweep.sources: unknown source {src!r}")
    hsq = [float(v) for v in s.get("hsq", lo.DEFAULT_HSQ_GRID)]
    case = int(s.get("case", 1))
    seed = int(cfg.get("seed", 0))
    sweep_rows, fit_rows, series = [], [], []
    for sigma0 in sigmas:
        prob = lo.GaussProblem(
            sigma0,
            _mask(s),
            T=float(s.get("T", 2.0)),
            eps_grid=tuple(float(e) for e in s.get("eps_grid", oracle.DEFAULT_EPS_GRID)),
            grid_n=int(s.get("grid_n", 2000)),
            richardson=bool(s.get("richardson", True)),
            mc_steps=int(s.get("mc_steps", 40000)),
            mc_batch=int(s.get("mc_batch", 100000)),
            mc_seed=seed,
            mc_eps=tuple(float(e) for e in s.get("mc_eps", (0.02,))),
        )
        for src in sources:
            res = lo.sweep_h(prob, hsq, src)
            for r in res.rows:
                sweep_rows.append((sigma0, case, r.hsq, r.epsilon, r.metric, r.value, r.source, r.r2, r.error))
            x, L = res.series("L", src)
            fit_rows.extend(_fit_rows(sigma0, src, x, L, float(s.get("fit_min", 4.0))))
            series.append((f"sigma0={sigma0:g} {src}", x, L))
    write_csv(os.path.join(out, "sweep.csv"), ["sigma0", "case", "hsq", "epsilon", "metric", "value", "source", "r2", "error"], sweep_rows)
    write_csv(os.path.join(out, "fits.csv"), ["sigma0", "source", "fit", "slope", "intercept", "r2", "plateau", "note"], fit_rows)
    if s.get("svg", True):
        plots.write_line_chart(os.path.join(out, "leading_L.svg"), series, "h^2", "L (log10)", f"case {case}", logy=True)
    return {"mc_seed": seed}


def run_sample(cfg, out) -> dict:
    params = _params(cfg)
    sched = cfgmod.section(cfg, "schedule")
    smp = cfgmod.section(cfg, "sampler")
    alpha = float(sched.get("h_value", smp.get("alpha", 1.0)))
    model = scores.model_from_config(cfgmod.section(cfg, "model"), params)
    if sched.get("h_mode") == "const_unit_time" and not params.is_unit:
        model = scores.UnitClockModel(model, sch.rescale_to_unit_g(params))
        params = model.params
    pert = scores.perturbation_from_config(cfgmod.section(cfg, "pert"))
    sc = samplers.SamplerConfig(
        scheme=str(smp.get("scheme", "euler_maruyama")),
        steps=int(smp.get("steps", 1000)),
        batch=int(smp.get("batch", 10000)),
        seed=int(smp.get("seed", cfg.get("seed", 0))),
        alpha=alpha,
        init=str(smp.get("init", "exact_pT")),
        chunk=int(smp.get("chunk", 50000)),
    )
    y = samplers.simulate(scores.PerturbedScore(model, pert), params, sc).terminal_samples
    samplers.write_samples_csv(os.path.join(out, "samples.csv"), y)
    return {"sampler_seed": sc.seed}


def run_train(cfg, out) -> dict:
    s = cfgmod.section(cfg, "train")
    seed = int(cfg.get("seed", 0))
    params = _params(cfg) if "schedule" in cfg else sch.ScheduleParams(0.1, 20.0, 1.0)
    sampler, dim = sm.dataset_sampler(str(s.get("dataset", "swissroll")))
    weight = str(s.get("weight", "default"))
    keys = ("steps", "batch", "lr", "decay_every", "decay", "t_min_frac", "optimizer", "init_seed")
    tc = sm.TrainConfig(seed=seed, **{k: s[k] for k in keys if k in s})
    res = sm.train_dsm(sampler, params, weight, tc, dim)
    res.model.net.save(os.path.join(out, "model.bin"))
    write_csv(os.path.join(out, "loss.csv"), ["step", "loss"], zip(range(len(res.losses)), res.losses))
    npts = int(s.get("rel_points", 50))
    if weight != "default" and npts > 0:
        ref = sm.train_dsm(sampler, params, "default", tc, dim)
        t_grid = np.linspace(tc.t_min_frac * params.T, params.T, npts)
        ev = sampler(noise.rng(seed, noise.INIT_WEIGHTS + 5), int(s.get("rel_eval", 5000)))
        ratio = sm.relative_sml(res.model, ref.model, params, t_grid, ev, seed)
        write_csv(os.path.join(out, "relative_sml.csv"), ["t", "ratio"], zip(t_grid, ratio))
    return {"train_seed": seed, "init_seed": tc.seed if tc.init_seed is None else tc.init_seed}


def run_metrics(cfg, out) -> dict:
    s = cfgmod.section(cfg, "metrics")
    if "p" not in s or "q" not in s:
        raise ConfigError("metrics.p and metrics.q: both sample files are required")
    p = samplers.read_samples_csv(s["p"])
    q = samplers.read_samples_csv(s["q"])
    res = metrics.compare(p, q, bins=int(s.get("bins", 100)), n_proj=int(s.get("n_proj", 64)), seed=int(cfg.get("seed", 0)))
    keys = ["kl", "js", "w1"] + sorted(k for k in res if k not in ("kl", "js", "w1"))
    write_csv(os.path.join(out, "metrics.csv"), keys, [[res[k] for k in keys]])
    return {}


EXPERIMENTS = {
    "oracle": run_oracle,
    "fpsolve": run_fpsolve,
    "sweep": run_sweep,
    "sample": run_sample,
    "train": run_train,
    "metrics": run_metrics,
}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:10]


def _run_dir(root, cfg) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    base = os.path.join(root, f"{stamp}-{config_hash(cfg)}")
    path, k = base, 1
    while os.path.exists(path):
        path, k = f"{base}-{k}", k + 1
    os.makedirs(path)
    return path


def execute(cfg: dict, root: str = "runs") -> str:
    """Run a validated config; returns the artifacts directory."""
    cfgmod.validate(cfg)
    out = _run_dir(root, cfg)
    with open(os.path.join(out, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.dumps(cfg))
    t0 = time.time()
    seeds = EXPERIMENTS[cfg["experiment"]](cfg, out)
    wall = time.time() - t0
    files = sorted(f for f in os.listdir(out) if f.endswith((".csv", ".svg", ".bin")))
    manifest = {
        "config": cfg,
        "seeds": {"seed": int(cfg.get("seed", 0)), **seeds},
        "versions": {"difflab": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
        "wall_clock_s": wall,
        "checksums": {f: sha256(os.path.join(out, f)) for f in files},
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out


def _load_any(path) -> dict:
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if "config" not in data:
            raise ConfigError("manifest has no 'config' entry")
        return cfgmod.validate(data["config"])
    return cfgmod.load(path)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _flags_config(a) -> dict:
    cmd = a.command
    if cmd == "oracle":
        return {"experiment": "oracle", "oracle": _drop_none({"sigma0": a.sigma0, "hsq": a.hsq, "case": a.case, "epsilon": a.epsilon, "mask_c": a.mask_c, "T": a.T})}
    if cmd == "fpsolve":
        return {
            "experiment": "fpsolve",
            "fpsolve": _drop_none({"sigma0": a.sigma0, "hsq": a.hsq, "case": a.case, "mask_c": a.mask_c, "grid_n": a.grid_n, "grid_R": a.grid_R, "dt": a.dt, "T": a.T, "richardson": not a.no_richardson}),
        }
    if cmd == "sample":
        cfg = {
            "experiment": "sample",
            "model": _drop_none({"family": a.family, "sigma0": a.sigma0}),
            "pert": _drop_none({"epsilon": a.epsilon, "mask": a.case, "mask_c": a.mask_c}),
            "sampler": _drop_none({"scheme": a.scheme, "steps": a.steps, "batch": a.batch, "seed": a.seed, "alpha": a.alpha, "init": a.init}),
        }
        if a.T is not None:
            cfg["schedule"] = {"beta0": 1.0, "beta1": 1.0, "T": a.T}
        return cfg
    if cmd == "train":
        return {"experiment": "train", "seed": a.seed, "train": _drop_none({"dataset": a.dataset, "weight": a.weight, "steps": a.steps})}
    if cmd == "metrics":
        return {"experiment": "metrics", "metrics": _drop_none({"p": a.p, "q": a.q, "bins": a.bins, "n_proj": a.n_proj})}
    raise AssertionError(cmd)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="difflab", description="Diffusion-coefficient experiments on toy data.")
    ap.add_argument("--runs", default="runs", help="root directory for run artifacts")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("run", help="run a TOML config or repeat a manifest.json")
    p.add_argument("config")
    p = sub.add_parser("sweep", help="h^2 sweep driven by a config file")
    p.add_argument("config")

    p = sub.add_parser("oracle", help="closed-form KL and L for 1D Gaussian data")
    p.add_argument("--sigma0", type=float)
    p.add_argument("--hsq", type=float)
    p.add_argument("--case", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mask-c", dest="mask_c", type=float)
    p.add_argument("--T", type=float)

    p = sub.add_parser("fpsolve", help="first-order density perturbation on a grid")
    p.add_argument("--sigma0", type=float)
    p.add_argument("--hsq", type=float)
    p.add_argument("--case", type=int)
    p.add_argument("--mask-c", dest="mask_c", type=float)
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--grid-R", dest="grid_R", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--no-richardson", action="store_true")

    p = sub.add_parser("sample", help="reverse-time sampling with an analytic score")
    p.add_argument("--family", choices=("gauss1d", "gmm1d", "gmm2d"))
    p.add_argument("--sigma0", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--case", type=int)
    p.add_argument("--mask-c", dest="mask_c", type=float)
    p.add_argument("--scheme", choices=samplers.SCHEMES)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--init", choices=samplers.INITS)
    p.add_argument("--T", type=float)

    p = sub.add_parser("train", help="denoising score matching on a toy dataset")
    p.add_argument("--dataset", choices=("swissroll", "gmm1d", "gmm2d"), default="swissroll")
    p.add_argument("--weight", choices=sm.WEIGHT_SCHEMES, default="default")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("metrics", help="compare two sample CSV files")
    p.add_argument("p")
    p.add_argument("q")
    p.add_argument("--bins", type=int)
    p.add_argument("--n-proj", dest="n_proj", type=int)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    if a.command is None:
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if a.command in ("run", "sweep"):
            cfg = _load_any(a.config)
            if a.command == "sweep" and cfg["experiment"] != "sweep":
                raise ConfigError("experiment: the sweep subcommand needs experiment = \"sweep\"")
        else:
            cfg = _flags_config(a)
        out = execute(cfg, a.runs)
    except ConfigError as exc:
        print(f"difflab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"difflab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
