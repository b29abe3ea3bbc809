"""Batch experiment driver.

Subcommands:

    check-frequency   margin table for a list of frequency vectors
    reduce            build a model, run the iteration, write the
                      convergence table and the final normal form
    measure           excluded-fraction sweep over gamma with slope fit
    verify            reduce, then direct RK4 versus reconstruction
    selftest          the seeded property suite

Every run reads a single JSON config (--config), writes CSV tables plus
a manifest capturing the resolved configuration into --out, and is
deterministic given the seed: identical config and seed give
byte-identical outputs.  A manifest can be fed back as the config of a
rerun.  Exit codes: 0 ok, 1 property failure, 2 resonance exclusion,
3 config error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__
from .approxfn import ApproximationFunction, ApproxFnError
from .flow import FlowDomainError, LieDivergence, load_symplectic_map
from .hamrep import NormalForm, iteration_norm
from .homological import DivisorViolation
from .ioutil import read_json, write_csv, write_json
from .kamloop import build_schedule, compose_transform, reduce, write_convergence_csv
from .models import (
    halfwave_hamiltonian,
    potential_from_config,
    verify_assumptions,
    wave_hamiltonian,
)
from .selftest import check_names, run_suite
from .smalldiv import ResonanceQuery, measure_scan, min_margin
from .verify import (
    integrate_direct,
    integrate_reduced,
    stability_ratio,
    sup_relative_error,
    write_trajectory_csv,
)

OK, PROPERTY_FAILURE, RESONANCE, CONFIG_ERROR, IO_ERROR = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config key {key!r} is required")
    return cfg[key]


def _af_from(cfg: dict) -> ApproximationFunction:
    return ApproximationFunction.from_config(cfg.get("af", {"family": "power", "alpha": 0.5}))


def _model_from(cfg: dict, rng) -> tuple:
    """(N, P, V, model name) from the model section of the config."""
    model = cfg.get("model", "halfwave")
    if model not in ("halfwave", "wave"):
        raise ConfigError(f"unknown model {model!r}")
    omega = np.asarray(_require(cfg, "omega"), dtype=float)
    eps = float(cfg.get("epsilon", 1e-3))
    J = int(cfg.get("J", 32))
    K_cap = int(cfg.get("K_cap", 16))
    s = float(cfg.get("s", 1.0))
    pot_cfg = dict(cfg.get("potential", {"preset": "single-cosine"}))
    V = potential_from_config(pot_cfg, rng)
    # analyticity overrides apply to any preset
    from dataclasses import replace

    for key in ("a", "p", "width"):
        if key in pot_cfg:
            V = replace(V, **{key: float(pot_cfg[key])})
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if model == "wave":
            m = float(cfg.get("m", 1.0))
            N, P = wave_hamiltonian(m, eps, V, J, K_cap, omega, s=s)
        else:
            N, P = halfwave_hamiltonian(eps, V, J, K_cap, omega, s=s)
    return N, P, V, model


def _schedule_from(cfg: dict, af, P) -> tuple:
    sc = dict(cfg.get("schedule", {}))
    rho0 = float(sc.get("rho0", 2.0 * P.a if P.a > 0 else 0.1))
    sched = build_schedule(
        af,
        gamma0=float(sc.get("gamma0", 0.05)),
        rho0=rho0,
        r0=float(sc.get("r0", P.r)),
        s0=float(sc.get("s0", P.s)),
        eps0=iteration_norm(P, rho0),
        sigma_total=sc.get("sigma_total"),
        kappa=float(sc.get("kappa", 4.0 / 3.0)),
        C_star=float(sc.get("C_star", 2.0)),
        T=sc.get("T"),
        nu_max=int(sc.get("nu_max", 8)),
        k_start=sc.get("k_start"),
        k_growth=float(sc.get("k_growth", 4.0 / 3.0)),
        K_list=sc.get("K_list"),
    )
    return sched, sc


def _manifest(out_dir: str, cfg: dict, seed: int, extra: dict) -> None:
    doc = {"tool": "kamreduce", "version": __version__, "seed": seed, "config": cfg}
    doc.update(extra)
    write_json(os.path.join(out_dir, "manifest.json"), doc)


# ---------------------------------------------------------------------------
# subcommands


def cmd_check_frequency(cfg: dict, out_dir: str, seed: int, threads: int) -> int:
    rng = np.random.default_rng(seed)
    check = dict(cfg.get("check", {}))
    omega_list = check.get("omega_list", [])
    if not omega_list:
        print("check-frequency: empty omega list", file=sys.stderr)
        return CONFIG_ERROR
    af = _af_from(cfg)
    gamma = float(check.get("gamma", 1e-2))
    K = int(check.get("K", 10))
    J = int(check.get("J", cfg.get("J", 32)))
    rows = []
    for om in omega_list:
        omega = np.asarray(om, dtype=float)
        local = dict(cfg)
        local["omega"] = list(map(float, omega))
        N, P, V, model = _model_from(local, rng)
        q = ResonanceQuery(af=af, gamma=gamma, K=K, J=min(J, N.J))
        rep = min_margin(omega, N, q)
        rows.append(
            [" ".join(f"{x:.17g}" for x in omega), rep.worst,
             " ".join(str(c) for c in rep.k), rep.i, rep.j, rep.family,
             rep.non_resonant]
        )
    write_csv(
        os.path.join(out_dir, "check_frequency.csv"),
        ["omega", "worst_margin", "argmin_k", "argmin_i", "argmin_j", "family", "non_resonant"],
        rows,
    )
    _manifest(out_dir, cfg, seed, {"command": "check-frequency", "rows": len(rows)})
    return OK


def _run_reduction(cfg: dict, out_dir: str, seed: int):
    rng = np.random.default_rng(seed)
    af = _af_from(cfg)
    N, P, V, model = _model_from(cfg, rng)
    assumption_rep = verify_assumptions(
        N, P, V, float(cfg.get("epsilon", 1e-3)), model, m=float(cfg.get("m", 0.0))
    )
    write_csv(
        os.path.join(out_dir, "assumptions.csv"),
        ["check", "value", "bound", "ok"],
        assumption_rep.rows(),
    )
    sched, sc = _schedule_from(cfg, af, P)
    res = reduce(
        N, P, sched,
        nu_max=int(sc.get("nu_max", 8)),
        stop_tol=float(sc.get("stop_tol", 1e-12)),
        flow_c=float(sc.get("flow_c", 0.25)),
    )
    return N, P, sched, res, assumption_rep, model


def cmd_reduce(cfg: dict, out_dir: str, seed: int, threads: int) -> int:
    try:
        N, P, sched, res, assumption_rep, model = _run_reduction(cfg, out_dir, seed)
    except DivisorViolation as exc:
        write_csv(
            os.path.join(out_dir, "convergence.csv"),
            ["error", "k", "i", "j", "value", "threshold", "family"],
            [["DivisorViolation", " ".join(str(c) for c in exc.k), exc.i, exc.j,
              exc.value, exc.threshold, exc.family]],
        )
        _manifest(out_dir, cfg, seed, {"command": "reduce", "error": str(exc)})
        print(f"reduce: resonant frequency excluded: {exc}", file=sys.stderr)
        return RESONANCE
    write_convergence_csv(os.path.join(out_dir, "convergence.csv"), res.reports)
    write_json(
        os.path.join(out_dir, "normal_form.json"),
        {
            "omega": res.N_inf.omega.tolist(),
            "Omega_infinity": res.N_inf.Omega.tolist(),
            "omega_breve": res.N_inf.omega_breve.tolist(),
        },
    )
    _manifest(
        out_dir, cfg, seed,
        {
            "command": "reduce",
            "schedule": sched.to_dict(),
            "converged": res.converged,
            "stop_reason": res.stop_reason,
            "final_norm": res.final_norm,
            "contraction_ratios": res.contraction_ratios(),
            "assumptions_ok": assumption_rep.all_ok,
        },
    )
    print(f"reduce: {res.stop_reason}; final [P] = {res.final_norm:.3e}")
    return OK


def cmd_measure(cfg: dict, out_dir: str, seed: int, threads: int) -> int:
    rng = np.random.default_rng(seed)
    mcfg = dict(cfg.get("measure", {}))
    gammas = mcfg.get("gamma_list", [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    grid = int(mcfg.get("grid", 0))
    if grid <= 0:
        print("measure: grid must be positive", file=sys.stderr)
        return CONFIG_ERROR
    K = int(mcfg.get("K", 10))
    J = int(mcfg.get("J", cfg.get("J", 32)))
    af = _af_from(cfg)

    def builder(omega):
        local = dict(cfg)
        local["omega"] = list(np.atleast_1d(omega).astype(float))
        local["J"] = J
        N, _, _, _ = _model_from(local, rng)
        return N

    scan = measure_scan(
        af, gammas, grid, K=K, J=J, N_builder=builder,
        A2_override=mcfg.get("A2_override"),
    )
    write_csv(
        os.path.join(out_dir, "measure.csv"),
        ["gamma", "grid", "excluded_fraction", "slope_fit"],
        scan.rows(),
    )
    _manifest(
        out_dir, cfg, seed,
        {"command": "measure", "slope": scan.slope, "fractions": scan.fractions},
    )
    slope_text = "n/a" if scan.slope is None else f"{scan.slope:.4f}"
    print(f"measure: slope = {slope_text} over {len(gammas)} gamma values")
    return OK


def cmd_verify(cfg: dict, out_dir: str, seed: int, threads: int) -> int:
    vcfg = dict(cfg.get("verify", {}))
    chain_file = vcfg.get("chain_file")
    try:
        N, P, sched, res, assumption_rep, model = _run_reduction(cfg, out_dir, seed)
    except DivisorViolation as exc:
        print(f"verify: resonant frequency excluded: {exc}", file=sys.stderr)
        return RESONANCE
    if chain_file is not None:
        try:
            composed = load_symplectic_map(chain_file)
        except (OSError, ValueError, KeyError) as exc:
            print(f"verify: cannot load chain file: {exc}", file=sys.stderr)
            return IO_ERROR
    elif res.chain:
        composed = compose_transform(res.chain)
    else:
        composed = None

    T = float(vcfg.get("T", 100.0))
    dt = vcfg.get("dt")
    samples = int(vcfg.get("samples", 201))
    J = P.J
    z0 = np.zeros(J, dtype=complex)
    if "z0" in vcfg:
        z0[: len(vcfg["z0"])] = [complex(v) for v in vcfg["z0"]]
    else:
        z0[int(vcfg.get("z0_mode", 1)) - 1] = 1.0

    direct = integrate_direct(N, P, z0, T=T, dt=dt, samples=samples)
    rows = []
    if composed is not None:
        reduced = integrate_reduced(
            res.N_inf, composed, N.omega, z0, direct.times, a=P.a, p=P.p
        )
        sup_err = sup_relative_error(direct, reduced)
        for m in range(len(direct.times)):
            rows.append(
                [direct.times[m], direct.norms[m], reduced.norms[m],
                 abs(direct.norms[m] - reduced.norms[m]) / direct.norms[0]]
            )
    else:
        reduced = None
        sup_err = 0.0
        for m in range(len(direct.times)):
            rows.append([direct.times[m], direct.norms[m], direct.norms[m], 0.0])
    ratio = stability_ratio(direct)
    budget = direct.drift + res.final_norm * T * 10.0
    write_csv(
        os.path.join(out_dir, "verify.csv"),
        ["t", "direct_norm", "reduced_norm", "norm_diff_rel"],
        rows,
    )
    write_trajectory_csv(direct, os.path.join(out_dir, "trajectory_direct.csv"))
    _manifest(
        out_dir, cfg, seed,
        {
            "command": "verify",
            "sup_relative_error": sup_err,
            "stability_ratio": ratio,
            "error_budget": budget,
            "integrator_drift": direct.drift,
            "final_norm": res.final_norm,
            "unstable": direct.unstable,
        },
    )
    print(
        f"verify: sup error = {sup_err:.3e} (budget {budget:.3e}), "
        f"stability ratio = {ratio:.6f}"
    )
    return OK


def cmd_selftest(cfg: dict, out_dir: str, seed: int, threads: int) -> int:
    scfg = dict(cfg.get("selftest", {}))
    if scfg.get("list"):
        for name in check_names():
            print(name)
        return OK
    results = run_suite(
        seed=seed,
        tolerances=scfg.get("tolerances"),
        instance_scale=float(scfg.get("instance_scale", 1.0)),
        only=scfg.get("only"),
    )
    rows = [[r.name, r.passed, r.metric, r.tolerance, r.instances] for r in results]
    write_csv(
        os.path.join(out_dir, "selftest_report.csv"),
        ["check", "passed", "metric", "tolerance", "instances"],
        rows,
    )
    failed = [r.name for r in results if not r.passed]
    _manifest(
        out_dir, cfg, seed,
        {"command": "selftest", "checks": len(results), "failed": failed},
    )
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}")
    if failed:
        print(f"selftest: {len(failed)} checks failed", file=sys.stderr)
        return PROPERTY_FAILURE
    return OK


COMMANDS = {
    "check-frequency": cmd_check_frequency,
    "reduce": cmd_reduce,
    "measure": cmd_measure,
    "verify": cmd_verify,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kamreduce",
        description="reducibility experiments for quasi-periodic linear Hamiltonian systems",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="JSON config (or a manifest)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument(
        "--threads", type=int, default=None,
        help="worker cap (falls back to KAMREDUCE_THREADS; current build runs vectorised single-process)",
    )
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("KAMREDUCE_THREADS", "1"))

    cfg = {}
    if args.config is not None:
        try:
            cfg = read_json(args.config)
        except OSError as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return IO_ERROR
        except ValueError as exc:
            print(f"config is not valid JSON: {exc}", file=sys.stderr)
            return CONFIG_ERROR
    if "config" in cfg and isinstance(cfg["config"], dict):
        cfg = cfg["config"]  # a manifest was passed: rerun its config

    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return IO_ERROR

    try:
        return COMMANDS[args.command](cfg, args.out, seed, threads)
    except (ConfigError, ApproxFnError, ValueError, KeyError) as exc:
        print(f"{args.command}: configuration error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except DivisorViolation as exc:
        print(f"{args.command}: resonance exclusion: {exc}", file=sys.stderr)
        return RESONANCE
    except (FlowDomainError, LieDivergence) as exc:
        print(f"{args.command}: property failure: {exc}", file=sys.stderr)
        return PROPERTY_FAILURE
    except OSError as exc:
        print(f"{args.command}: I/O error: {exc}", file=sys.stderr)
        return IO_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
