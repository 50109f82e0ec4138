"""Command-line entry point wiring configs to experiments.

Subcommands: check-admissible, flow, uprime, propagate, echo, moments,
decay, beta, compare. Every run emits machine-readable JSON/CSV files
embedding the manifest hash; identical manifests give bit-identical
files. Exit codes: 0 success, 2 configuration/validation error, 3
numerical failure (the failing invariant is named on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import configio
from .errors import ConfigError, EigenEchoError, NumericsError
from .hamflow import flow, flow_trace, symplectic_defect
from .manifest import ExperimentManifest, canonical_json, family_hash
from .measure import make_measure
from .metric import check_condition_A, check_positive_definite
from .moments import decay_study, estimate_moments
from .quantum import (
    build_operator,
    constant_potential_value,
    default_grid_size,
    evaluate,
    flat_eigenfunction,
    loschmidt_echo,
    norm_state,
    propagate,
    save_wave,
)
from .theory import BetaConfig, beta, compare
from .uprime import STATUS_OK, embed_parameters, solve_spatial_start_batch, solve_uprime_batch


def _fmt(v):
    return repr(float(v))


def _write_json(path, manifest, result):
    payload = {"manifest": manifest.to_dict(), "result": result}
    Path(path).write_text(canonical_json(payload) + "\n")


def _write_csv(path, header, rows, manifest_hash=""):
    lines = []
    if manifest_hash:
        lines.append(f"# manifest={manifest_hash}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _t_grid(params):
    tg = params.get("t_grid", {"stop": 0.5, "num": 26})
    return np.linspace(0.0, tg["stop"], tg["num"])


def cmd_check_admissible(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    params = cfg["params"]
    adm = params.get("admissibility", {})
    patch = adm.get("x_patch")
    rep = check_condition_A(
        family, params.get("E", 1.0),
        tuple(params.get("uprime_indices", (0, 1))),
        sample_budget=adm.get("sample_budget", 2**14),
        t=abs(params.get("t", 0.1)),
        det_floor=adm.get("det_floor", 1e-6),
        x_patch=None if patch is None else (tuple(patch["center"]), patch["radius"]),
    )
    pd = check_positive_definite(family)
    result = {"admissibility": rep.to_dict(), "positive_definite": pd.to_dict(),
              "family_hash": family_hash(family)}
    return result, {"admissibility.json": result}, {}


def cmd_flow(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    params = cfg["params"]
    tol = cfg.get("classical", {}).get("tol", 1e-12)
    u = np.asarray(params.get("u", [0.0] * family.k), dtype=float)
    z0 = np.concatenate([params["z0"]["x"], params["z0"]["xi"]])
    times = _t_grid(params)
    rows = flow_trace(family, u, z0, times, tol=tol)
    jet = flow(family, u, float(times[-1]), z0, tol=tol)
    result = {
        "energy_drift": jet.energy_drift,
        "symplectic_defect": symplectic_defect(jet.monodromy),
        "monodromy_det": float(np.linalg.det(jet.monodromy)),
        "endpoint": {"x": jet.endpoint.x.tolist(), "xi": jet.endpoint.xi.tolist()},
        "time": jet.time,
        "family_hash": family_hash(family),
    }
    return result, {"flow.json": result}, {
        "flow_trace.csv": (("t", "x1", "x2", "xi1", "xi2", "energy_drift"), rows)}


def cmd_uprime(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    params = cfg["params"]
    t = params.get("t", 0.1)
    x = np.asarray(params.get("x", [1.0, 2.0]), dtype=float)
    E = params.get("E", 1.0)
    n = params.get("uprime_diag", {}).get("n_nodes", 200)
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, 2 * np.pi, size=n)
    eta = np.sqrt(E) * np.stack([np.cos(th), np.sin(th)], axis=-1)
    eps = family.epsilon
    up_true = rng.uniform(-eps / 2, eps / 2, size=(n, 2))
    idx = tuple(params.get("uprime_indices", (0, 1)))
    rest = family.k - 2
    u_dd = np.zeros(rest)
    U = embed_parameters(up_true, u_dd, idx, family.k)
    Y, _, _, _, st0 = solve_spatial_start_batch(family, U, t, x, ETA=eta,
                                                uprime_indices=idx)
    UP, J, rn, status = solve_uprime_batch(family, x, u_dd, t, Y, eta,
                                           uprime_indices=idx)
    ok = status == STATUS_OK
    dets = np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
    result = {
        "nodes": int(n),
        "converged": int(np.sum(ok)),
        "out_of_box": int(np.sum(status == 2)),
        "no_convergence": int(np.sum(status == 1)),
        "max_residual": float(np.max(rn[ok])) if ok.any() else None,
        "max_recovery_error": float(np.max(np.abs(UP[ok] - up_true[ok])))
        if ok.any() else None,
        "jacobian_abs_det_over_t2": {
            "min": float(np.min(dets[ok]) / t**2) if ok.any() else None,
            "max": float(np.max(dets[ok]) / t**2) if ok.any() else None,
        },
        "family_hash": family_hash(family),
    }
    return result, {"uprime.json": result}, {}


def cmd_propagate(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    params = cfg["params"]
    qk = configio.quantum_kwargs(cfg)
    m = params.get("m", [3, 4])
    E = params.get("E", 1.0)
    h = float(np.sqrt(E) / np.linalg.norm(m))
    N = cfg.get("quantum", {}).get("grid_N") or default_grid_size(m)
    u = np.asarray(params.get("u", [0.0] * family.k), dtype=float)
    t = params.get("t", 0.1)
    x = np.asarray(params.get("x", [1.0, 2.0]), dtype=float)
    handle = build_operator(family, u, h, N)
    state, E_h = flat_eigenfunction(m, h, N, V0=constant_potential_value(family))
    psi0 = handle.sqrt_rho * state.amplitudes
    n0 = float(np.sqrt(np.sum(np.abs(psi0) ** 2)) * (2 * np.pi / N))
    out = propagate(state, handle, t, **qk)
    val = evaluate(out, x)
    result = {
        "h": h, "N": N, "t": t, "E_h": E_h,
        "value_at_x": {"re": float(np.real(val)), "im": float(np.imag(val))},
        "norm_weighted": norm_state(out),
        "norm_drift": abs(norm_state(out) - n0),
        "family_hash": family_hash(family),
    }
    files = {"propagate.json": result}
    wave_path = Path(out_dir) / "state.wave"
    save_wave(wave_path, out, family_hash=family_hash(family))
    return result, files, {}


def cmd_echo(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    params = cfg["params"]
    qk = configio.quantum_kwargs(cfg)
    m = params.get("m", [3, 4])
    E = params.get("E", 1.0)
    h = float(np.sqrt(E) / np.linalg.norm(m))
    u = np.asarray(params.get("u", [0.0] * family.k), dtype=float)
    rows = loschmidt_echo(family, u, h, m, _t_grid(params),
                          N=cfg.get("quantum", {}).get("grid_N"),
                          tol=qk["tol"], krylov_dim=qk["krylov_dim"],
                          theta_max=qk["theta_max"])
    result = {
        "h": h, "m": list(m), "u": u.tolist(),
        "min": float(np.min(rows[:, 1])), "max": float(np.max(rows[:, 1])),
        "final": float(rows[-1, 1]),
        "family_hash": family_hash(family),
    }
    return result, {"echo.json": result}, {"echo.csv": (("t", "M_LE"), rows)}


def _moment_args(cfg, seed, workers):
    params = cfg["params"]
    mcfg = cfg["measure"]
    qk = configio.quantum_kwargs(cfg)
    return {
        "p_max": params.get("p_max", 3),
        "nodes_per_dim": mcfg.get("nodes_per_dim", 11),
        "method": mcfg.get("method", "tensor"),
        "qmc_m": mcfg.get("qmc_m", 7),
        "qmc_replicates": mcfg.get("qmc_replicates", 4),
        "seed": seed,
        "workers": workers,
        "grid_N": cfg.get("quantum", {}).get("grid_N"),
        "tol": qk["tol"],
        "krylov_dim": qk["krylov_dim"],
        "theta_max": qk["theta_max"],
    }


def cmd_moments(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    measure = configio.build_measure(cfg, family)
    params = cfg["params"]
    m = params.get("m", [3, 4])
    E = params.get("E", 1.0)
    h = float(np.sqrt(E) / np.linalg.norm(m))
    rep = estimate_moments(family, measure, params.get("x", [1.0, 2.0]),
                           params.get("t", 0.1), h, m,
                           **_moment_args(cfg, seed, workers))
    rows = [(rep.h, p, rep.odd_moments[p], rep.odd_moment_errors[p],
             rep.second_moment_abs, rep.variance_re) for p in rep.p_list]
    return rep.to_dict(), {"moments.json": rep.to_dict()}, {
        "moments.csv": (("h", "p", "moment", "moment_error",
                         "second_moment_abs", "variance_re"), rows)}


def cmd_decay(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    measure = configio.build_measure(cfg, family)
    params = cfg["params"]
    study = decay_study(family, measure, params.get("x", [1.0, 2.0]),
                        params.get("t", 0.1), params["m_list"],
                        E=params.get("E", 1.0),
                        p_list=tuple(params.get("p_list", [1, 3])),
                        **_moment_args(cfg, seed, workers))
    rows = [(r["h"], r["p"], r["moment"], r["moment_error"],
             r["second_moment_abs"], r["variance_re"]) for r in study.rows()]
    return study.to_dict(), {"decay.json": study.to_dict()}, {
        "decay.csv": (("h", "p", "moment", "moment_error",
                       "second_moment_abs", "variance_re"), rows)}


def _beta_config(cfg, family, measure):
    params = cfg["params"]
    bcfg = params.get("beta", {})
    E = params.get("E", 1.0)
    mode = bcfg.get("mode", "fixed-covector")
    xi0 = None
    if mode == "fixed-covector":
        m = np.asarray(params.get("m", [3, 4]), dtype=float)
        h = float(np.sqrt(E) / np.linalg.norm(m))
        xi0 = h * m
    adm = params.get("admissibility", {})
    return BetaConfig(
        family=family, measure=measure,
        x=params.get("x", [1.0, 2.0]), t=params.get("t", 0.1), E=E,
        mode=mode, xi0=xi0,
        n_theta=bcfg.get("n_theta", 32),
        n_uprime=bcfg.get("n_uprime", 24),
        n_udd=bcfg.get("n_udd", 24),
        uprime_indices=tuple(params.get("uprime_indices", (0, 1))),
        flow_tol=cfg.get("classical", {}).get("tol", 1e-12),
        admissibility_budget=adm.get("sample_budget", 2**12),
    )


def cmd_beta(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    measure = configio.build_measure(cfg, family)
    rep = beta(_beta_config(cfg, family, measure))
    rows = list(zip(rep.udd_nodes[:, 0] if rep.udd_nodes.shape[1] else [0.0],
                    rep.udd_weights, rep.beta_values))
    return rep.to_dict(), {"beta.json": rep.to_dict()}, {
        "beta.csv": (("u_dd", "weight", "beta"), rows)}


def cmd_compare(cfg, out_dir, seed, workers):
    family = configio.build_family(cfg)
    measure = configio.build_measure(cfg, family)
    params = cfg["params"]
    m = params.get("m", [3, 4])
    E = params.get("E", 1.0)
    h = float(np.sqrt(E) / np.linalg.norm(m))
    rep = estimate_moments(family, measure, params.get("x", [1.0, 2.0]),
                           params.get("t", 0.1), h, m,
                           **_moment_args(cfg, seed, workers))
    record = compare(_beta_config(cfg, family, measure), rep)
    return record, {"compare.json": record}, {}


COMMANDS = {
    "check-admissible": cmd_check_admissible,
    "flow": cmd_flow,
    "uprime": cmd_uprime,
    "propagate": cmd_propagate,
    "echo": cmd_echo,
    "moments": cmd_moments,
    "decay": cmd_decay,
    "beta": cmd_beta,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="eigenecho",
        description="Deformed-eigenfunction statistics on the flat 2-torus")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="JSON experiment configuration")
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = configio.load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        workers = args.workers if args.workers is not None else cfg.get("workers", 1)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result, json_files, csv_files = COMMANDS[args.command](cfg, out_dir,
                                                               seed, workers)
        manifest = ExperimentManifest(config=cfg, command=args.command, seed=seed)
        for name, payload in json_files.items():
            _write_json(out_dir / name, manifest, payload)
        for name, (header, rows) in csv_files.items():
            _write_csv(out_dir / name, header, rows, manifest_hash=manifest.hash)
        if args.command == "compare":
            ledger = out_dir / "results_ledger.csv"
            line = ",".join([manifest.hash, repr(result["relative_deviation"]),
                             repr(result["measured_second_moment"]),
                             repr(result["predicted_integral"]),
                             str(result["within_tolerance"])])
            header = "manifest,relative_deviation,measured,predicted,within_tolerance"
            if not ledger.exists():
                ledger.write_text(header + "\n" + line + "\n")
            else:
                with open(ledger, "a") as fh:
                    fh.write(line + "\n")
        print(json.dumps({"command": args.command, "manifest": manifest.hash,
                          "out_dir": str(out_dir)}))
        return 0
    except ConfigError as exc:
        print(f"config error at {exc.path or '<root>'}: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure [{exc.invariant}]: {exc}", file=sys.stderr)
        return 3
    except EigenEchoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
