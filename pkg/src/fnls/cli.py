"""Command line entry point ``fnls``.

    fnls <command> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]

Commands: simulate, sample-measure, sweep, balance, check-inequalities,
basis-info.  ``--config`` takes an INI file or a ``manifest.json`` written by
an earlier run.  Exit codes: 0 success, 1 failed check, 2 configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from . import dynamics
from .basis import Domain, build_basis
from .config import config_hash, parse_config, render
from .dynamics import FlowParams
from .errors import ConfigError, FNLSError, NonFinite, Overflow, ValidationError
from .fluctdissip import (DissipationSpec, EnsembleConfig, NoiseSpec, ito_mass_balance,
                          resolve_threads, run_ensemble)
from . import inequalities as ineq
from .io import read_manifest, write_csv, write_fdns, write_manifest
from .measures import StationaryRun, moment_bound_sweep, time_average_measure

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("simulate", "sample-measure", "sweep", "balance", "check-inequalities", "basis-info")


# -- model assembly ---------------------------------------------------------------------------

def build_model(cfg):
    """(basis, flow, dissipation spec, noise) described by ``cfg``."""
    dom, mod, noi = cfg.domain, cfg.model, cfg.noise
    basis = build_basis(dom.kind, dom.d, dom.N)
    flow = FlowParams(mod.sigma, cfg.time.dt, cfg.time.scheme)
    spec = DissipationSpec(mod.sigma, mod.s, mod.alpha, mod.eps, mod.xi, mod.branch)
    if noi.amplitudes is not None:
        amps = np.asarray(noi.amplitudes, dtype=float)
        if basis.domain is Domain.TORUS:
            # one amplitude per integer shell round(|k|)
            amps = amps[np.rint(basis.z).astype(int)]
        noise = NoiseSpec(amps + 0j, noi.circular)
    else:
        noise = NoiseSpec.default(basis, noi.a0, mod.sigma, noi.exponent, noi.circular)
    return basis, flow, spec, noise


def plane_wave_mode(cfg, basis):
    k = np.zeros(basis.d, dtype=int)
    k[0] = cfg.initial.mode
    return basis.mode_index(k)


def initial_state(cfg, basis, n=None):
    """Initial coefficients, shape (n_modes,) or (n, n_modes)."""
    ini = cfg.initial
    shape = (basis.n_modes,) if n is None else (n, basis.n_modes)
    c = np.zeros(shape, dtype=complex)
    if ini.kind == "plane_wave":
        c[..., plane_wave_mode(cfg, basis)] = ini.amplitude
    elif ini.kind == "random":
        rng = np.random.default_rng(ini.seed)
        c = ini.amplitude * ineq.random_fields(basis, rng, 1 if n is None else n, ini.decay)
        c = c[0] if n is None else c
    return c


# -- commands ---------------------------------------------------------------------------------

class Context:
    def __init__(self, cfg, out, threads):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.hash = config_hash(cfg)
        self.files = []
        self.lines = []

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows, self.hash)
        self.files.append(name)

    def say(self, text):
        self.lines.append(text)
        print(text)


def cmd_simulate(ctx):
    cfg = ctx.cfg
    basis, flow, _, _ = build_model(cfg)
    c0 = initial_state(cfg, basis)
    s, sigma = cfg.model.s, cfg.model.sigma
    observers = {
        "mass": lambda t, c: dynamics.mass(c),
        "energy": lambda t, c: dynamics.energy(basis, c, sigma),
        "hs_norm": lambda t, c: dynamics.sobolev_norm(basis, c, s),
        "l4_norm": lambda t, c: dynamics.l4_norm4(basis, c) ** 0.25,
    }
    plane = cfg.initial.kind == "plane_wave"
    if plane:
        j = plane_wave_mode(cfg, basis)
        A = cfg.initial.amplitude
        omega = basis.z[j] ** (2 * sigma) + abs(A) ** 2

        def phase_error(t, c):
            exact = np.zeros_like(c)
            exact[j] = A * np.exp(-1j * omega * t)
            return np.max(np.abs(c - exact))

        observers["phase_error"] = phase_error
    traj = dynamics.integrate(basis, c0, cfg.time.T, flow, observers, stride=cfg.time.stride)
    rec = traj.records
    header = ["t", "mass", "energy", f"hs_norm[{s:g}]", "l4_norm"] + (["phase_error"] if plane else [])
    cols = [traj.times, rec["mass"], rec["energy"], rec["hs_norm"], rec["l4_norm"]]
    if plane:
        cols.append(rec["phase_error"])
    ctx.csv("simulate.csv", header, zip(*cols))
    m, e = rec["mass"], rec["energy"]
    ctx.say(f"mass drift (relative): {np.max(np.abs(m - m[0])) / max(abs(m[0]), 1e-300):.3e}")
    ctx.say(f"energy drift (relative): {np.max(np.abs(e - e[0])) / max(abs(e[0]), 1e-300):.3e}")
    if plane:
        ctx.say(f"max phase error: {np.max(rec['phase_error']):.3e}")
    return EXIT_OK


def _ensemble(ctx, track_martingale=False):
    cfg = ctx.cfg
    basis, flow, spec, noise = build_model(cfg)
    spec.check_dimension(basis.d)
    n = cfg.ensemble.trajectories
    ecfg = EnsembleConfig(T=cfg.time.T, stride=cfg.time.stride, seed=cfg.ensemble.seed,
                          track_martingale=track_martingale)
    res = run_ensemble(basis, flow, spec, noise, initial_state(cfg, basis, n), ecfg, threads=ctx.threads)
    return res, (basis, flow, spec, noise)


def cmd_sample_measure(ctx):
    cfg = ctx.cfg
    res, (basis, flow, _, _) = _ensemble(ctx)
    names = list(res.observables)
    if cfg.ensemble.format == "fdns":
        write_fdns(ctx.out / "ensemble.fdns", res.times, res.observables, basis.n_modes, flow.dt,
                   cfg.time.stride, ctx.hash)
        ctx.files.append("ensemble.fdns")
    else:
        rows = ((i, t, *(res.observables[k][i, j] for k in names))
                for i in range(len(res.streams)) for j, t in enumerate(res.times))
        ctx.csv("trajectories.csv", ["traj", "t"] + names, rows)
    measure = time_average_measure(res.times, res.observables, cfg.time.burn_in)
    rows = [(k, measure.mean(k), measure.se(k), measure.count) for k in names]
    ctx.csv("measure.csv", ["observable", "mean", "se", "samples"], rows)
    for k, mean, se, _ in rows:
        ctx.say(f"{k:>12s}: {mean:.6g} ± {se:.2g}")
    return EXIT_OK


def cmd_balance(ctx):
    res, (basis, _, spec, noise) = _ensemble(ctx, track_martingale=True)
    A0 = noise.A(basis, 0.0)
    rep = ito_mass_balance(res, spec.alpha, A0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(rep.se > 0, rep.residual / rep.se, 0.0)
    ctx.csv("balance.csv", ["t", "residual", "se", "z", "compensated", "compensated_se"],
            zip(rep.times, rep.residual, rep.se, z, rep.compensated, rep.compensated_se))
    ok = rep.within(3.0)
    ctx.say(f"A0 = {A0:.6g}, trajectories = {res.final.shape[0]}")
    ctx.say(f"max |R|/SE = {rep.max_abs_z:.3f}")
    ctx.say(f"{'PASS' if ok else 'FAIL'} |R(t)| <= 3 SE at every sampled t")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_sweep(ctx):
    cfg = ctx.cfg
    mod, sw = cfg.model, cfg.sweep
    base = StationaryRun(
        domain=cfg.domain.kind, d=cfg.domain.d, N=cfg.domain.N, sigma=mod.sigma, s=mod.s,
        alpha=mod.alpha, eps=mod.eps, xi=mod.xi, branch=mod.branch, a0=cfg.noise.a0,
        decay=cfg.noise.exponent, dt=cfg.time.dt, T=cfg.time.T, burn_in=cfg.time.burn_in,
        stride=cfg.time.stride, n_traj=cfg.ensemble.trajectories, seed=cfg.ensemble.seed,
        threads=ctx.threads)
    rep = moment_bound_sweep(base, sw.Ns, sw.alphas, sw.factor, sw.T_scale)
    keys = ["N", "alpha", "energy_rate", "energy_rate_se", "weighted_hs", "mass_rate", "A0_half"]
    ctx.csv("sweep.csv", keys, ([c[k] for k in keys] for c in rep.cells))
    for c in rep.cells:
        ctx.say(f"N={c['N']:>4d} alpha={c['alpha']:<6g} E-rate={c['energy_rate']:.4g} "
                f"± {c['energy_rate_se']:.2g}  M-rate={c['mass_rate']:.4g} (A0/2={c['A0_half']:.4g})")
    ctx.say(f"{'PASS' if rep.passed else 'FAIL'} max/min mean energy dissipation rate = "
            f"{rep.ratio():.3f} (limit {sw.factor:g})")
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_check_inequalities(ctx):
    iq = ctx.cfg.inequalities
    verdicts = []

    rep = ineq.counting_sweep(iq.counting_sigmas, N2_max=iq.counting_N2_max, N1_max=iq.counting_N1_max,
                              bound=iq.counting_bound)
    keys = ["source", "sigma", "N1", "N2", "tau", "max_count", "ratio"]
    ctx.csv("counting.csv", keys, ([r[k] for k in keys] for r in rep.rows))
    verdicts.append((rep.passed, f"counting: C = {rep.constant:g} <= {iq.counting_bound:g} "
                                 "(ball_d2 rows exploratory)"))

    rng = np.random.default_rng(iq.seed)
    disagree = 0
    for source in ineq.ZSource:
        for _ in range(200):
            sigma = float(rng.choice(iq.counting_sigmas))
            N2 = int(2 ** rng.integers(0, 6))
            N1 = N2 * int(2 ** rng.integers(0, 3))
            tau = float(rng.uniform(0.0, 2.0 * (4 * N1) ** (2 * sigma)))
            q = ineq.CountingQuery(sigma, N1, N2, tau, source)
            disagree += ineq.lambda_count(q) != ineq.lambda_count_intervals(q)
    verdicts.append((disagree == 0, f"counting: brute force and interval counts disagree on {disagree} queries"))

    rows = []
    for kind, d in (("torus", 1), ("ball", 3), ("ball", 2)):
        basis = build_basis(kind, d, iq.cordoba_N)
        reports = ineq.cordoba_check(basis, iq.cordoba_gammas, iq.cordoba_trials, iq.cordoba_refinement,
                                     seed=iq.seed)
        c = ineq.random_fields(basis, rng, 4)
        for r in reports:
            red = ineq.complex_reduction_defect(basis, c, r.gamma)
            rows.append((kind, d, r.gamma, r.trials, r.min_defect, r.min_scaled, r.violations, red))
            verdicts.append((r.passed and red < 1e-10,
                             f"cordoba {kind} d={d} gamma={r.gamma:g}: {r.violations} violations, "
                             f"min D/scale = {r.min_scaled:.3e}, reduction defect {red:.1e}"))
    ctx.csv("cordoba.csv", ["domain", "d", "gamma", "trials", "min_defect", "min_scaled", "violations",
                            "reduction_defect"], rows)

    rs = ineq.radial_sobolev_check(3, iq.radial_s, iq.radial_Ns, iq.radial_trials, seed=iq.seed)
    ctx.csv("radial_sobolev.csv", ["N", "K"], zip(rs.Ns, rs.K))
    verdicts.append((rs.passed, f"radial sobolev d=3 s={rs.s:g}: K = "
                                f"{', '.join(f'{k:.4f}' for k in rs.K)} (change {rs.max_relative_change:.2%})"))

    fits = [ineq.eigenfunction_lp_fit(d, p, iq.lp_N) for d, p in ((3, 6.0), (2, 8.0))]
    ctx.csv("lp_fit.csv", ["d", "p", "N", "slope", "expected"],
            ((f.d, f.p, f.N, f.slope, f.expected) for f in fits))
    for f in fits:
        verdicts.append((f.passed, f"eigenfunction L^{f.p:g} d={f.d}: slope {f.slope:.4f}, expected {f.expected:g}"))

    for ok, text in verdicts:
        ctx.say(f"{'PASS' if ok else 'FAIL'} {text}")
    return EXIT_OK if all(ok for ok, _ in verdicts) else EXIT_CHECK


def cmd_basis_info(ctx):
    cfg = ctx.cfg
    basis = build_basis(cfg.domain.kind, cfg.domain.d, cfg.domain.N)
    p = cfg.basis_info.p
    if basis.domain is Domain.BALL:
        fine = build_basis(basis.domain, basis.d, basis.N, quad_nodes=int(p * basis.N + 64))
        norms = fine.lp_norm(fine.eigenmatrix.T, p)
    else:
        norms = np.ones(basis.n_modes)       # |e^{ik.x}| = 1 under the normalized measure
    ctx.csv("basis_info.csv", ["n", "z_n", f"lp{p:g}_norm"],
            zip(range(1, basis.n_modes + 1), basis.z, norms))
    ctx.say(f"{basis!r}")
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "sample-measure": cmd_sample_measure,
    "sweep": cmd_sweep,
    "balance": cmd_balance,
    "check-inequalities": cmd_check_inequalities,
    "basis-info": cmd_basis_info,
}


# -- entry point ------------------------------------------------------------------------------

def load_config(path):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        text = read_manifest(path)["config"]
    return parse_config(text)


def apply_overrides(cfg, seed=None, out=None):
    if seed is not None:
        if seed < 0:
            raise ValidationError(f"--seed must be non-negative, got {seed}")
        cfg = cfg.replace("ensemble", seed=seed).replace("initial", seed=seed).replace("inequalities", seed=seed)
    if out is not None:
        cfg = cfg.replace("output", dir=str(out))
    return cfg


def run(cfg, command, threads=None):
    """Execute ``command`` for a validated config; returns the exit code."""
    threads = resolve_threads(threads or cfg.ensemble.threads or None)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, threads)
    (out / "config.resolved.ini").write_text(render(cfg), encoding="utf-8")
    ctx.files.append("config.resolved.ini")
    start = time.perf_counter()
    code = HANDLERS[command](ctx)
    write_manifest(out / "manifest.json", command=command, config_text=render(cfg), config_hash=ctx.hash,
                   version=__version__, seed=cfg.ensemble.seed, wall_time=time.perf_counter() - start,
                   files=ctx.files)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="fnls", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"fnls {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI config or manifest.json of an earlier run")
    ap.add_argument("--out", help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", type=int, help="overrides every seed in the config")
    ap.add_argument("--threads", type=int,
                    help="worker processes; falls back to FNLS_THREADS, then [ensemble] threads")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args.seed, args.out)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    threads = args.threads or (int(os.environ["FNLS_THREADS"]) if os.environ.get("FNLS_THREADS") else None)
    try:
        return run(cfg, args.command, threads)
    except (NonFinite, Overflow) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FNLSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
