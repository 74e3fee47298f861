"""Command line interface.

All commands are driven by a JSON config file (``--config``) carrying a
``version`` field, a ``models`` table of named model descriptions, and one
section per subcommand; randomized commands additionally need an explicit
seed (``--seed`` or a ``seed`` entry).  Outputs are written under ``--out``
and are byte-identical for a fixed config and seed.

Exit codes: 0 success (including "no alarm" and degenerate calibration),
2 input or config errors, 3 assumption violations such as a positive
pre-change drift.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .bench import SweepRow, arl_edd_sweep, estimate_drift, write_sweep_csv
from .calibration import (CalibrationError, DriftSignError, solve_rho_star,
                          threshold_for_arl)
from .detectors import DetectorConfig, DetectorState, run_stream, step
from .lfd import (DisjointnessError, MeanPolytope, TrainConfig,
                  gaussian_polytope_lfd, train_beta_networks,
                  verify_drift_condition)
from .models import ModelError, ScoreMixture
from .rngs import RngStream
from .samplers import LangevinConfig
from .serialize import (dump_lfd_pair, dump_rho_solution, load_lfd_pair,
                        load_model, write_json)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3


class ConfigError(ValueError):
    pass


def _require(mapping, key, context):
    if key not in mapping:
        raise ConfigError(f"config section '{context}' is missing '{key}'")
    return mapping[key]


def _load_config(path):
    if path is None:
        raise ConfigError("--config is required")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            cfg = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if cfg.get("version") != 1:
        raise ConfigError("config must declare \"version\": 1")
    return cfg


def _models_table(cfg):
    table = {}
    for name, desc in cfg.get("models", {}).items():
        table[name] = load_model(desc)
    return table


def _named_model(table, name, context):
    if name not in table:
        raise ConfigError(f"config section '{context}' references unknown model '{name}'")
    return table[name]


def _seed_stream(cfg, args, needed=True):
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        if needed:
            raise ConfigError(
                "an explicit seed is required (--seed or a 'seed' config entry)"
            )
        return None
    return RngStream(int(seed))


def _out_dir(cfg, args):
    out = args.out or cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _detector_from(table, desc, context, omega=None):
    model_inf = _named_model(table, _require(desc, "model_inf", context), context)
    model_post = _named_model(table, _require(desc, "model_post", context), context)
    return DetectorConfig(
        model_inf=model_inf,
        model_post=model_post,
        omega=float(desc.get("omega", 0.0)) if omega is None else float(omega),
        rho=float(desc.get("rho", 1.0)),
    )


def cmd_lfd(cfg, args):
    section = _require(cfg, "lfd", "top level")
    table = _models_table(cfg)
    out = _out_dir(cfg, args)
    method = section.get("method", "analytic")
    if method == "analytic":
        cov = np.asarray(_require(section, "cov", "lfd"), float)
        pre = MeanPolytope(np.asarray(_require(section, "pre_vertices", "lfd"), float), cov)
        post = MeanPolytope(np.asarray(_require(section, "post_vertices", "lfd"), float), cov)
        pair = gaussian_polytope_lfd(pre, post)
        report = None
    elif method == "learned":
        stream = _seed_stream(cfg, args)
        basis_inf = [_named_model(table, n, "lfd.basis_inf") for n in _require(section, "basis_inf", "lfd")]
        basis_post = [_named_model(table, n, "lfd.basis_post") for n in _require(section, "basis_post", "lfd")]
        train = section.get("train", {})
        lang = train.get("langevin", {})
        tc = TrainConfig(
            rng=stream.substream(0),
            epochs=int(train.get("epochs", 50)),
            learning_rate=float(train.get("learning_rate", 1e-3)),
            langevin=LangevinConfig(
                step=float(lang.get("step", 0.01)),
                steps=int(lang.get("steps", 1000)),
            ),
            particle_count=int(train.get("particles", 10000)),
            minibatch=int(train.get("minibatch", 256)),
            hidden=int(train.get("hidden", 5)),
            holdout=int(train.get("holdout", 1000)),
            init_basis=int(train.get("init_basis", 0)),
        )
        pair, report = train_beta_networks(basis_inf, basis_post, tc)
    else:
        raise ConfigError("lfd.method must be 'analytic' or 'learned'")
    write_json(dump_lfd_pair(pair), os.path.join(out, "lfd.json"))
    print(f"provenance={pair.provenance} fisher_gap={pair.fisher_gap:.10g}")
    for note in pair.notes:
        print(f"note: {note}")
    if report is not None:
        beta_inf = " ".join(f"{b:.6g}" for b in report.avg_beta_inf)
        beta_post = " ".join(f"{b:.6g}" for b in report.avg_beta_post)
        print(f"avg_beta_inf=[{beta_inf}] avg_beta_post=[{beta_post}]")
        write_json(
            {
                "avg_beta_inf": list(map(float, report.avg_beta_inf)),
                "avg_beta_post": list(map(float, report.avg_beta_post)),
                "loss_history": list(report.loss_history),
                "holdout_count": report.holdout_count,
            },
            os.path.join(out, "lfd_report.json"),
        )
    verify = section.get("verify")
    if verify:
        stream = _seed_stream(cfg, args)
        basis = [_named_model(table, n, "lfd.verify") for n in verify["basis_inf"]] \
            if "basis_inf" in verify else None
        if basis is None:
            from .models import Gaussian
            basis = [Gaussian(v, np.asarray(section["cov"], float))
                     for v in np.asarray(section["pre_vertices"], float)]
        rep = verify_drift_condition(basis, pair, int(verify.get("n", 50000)),
                                     stream.substream(9).generator())
        for row in rep.rows:
            print(
                f"vertex {row.index}: gap={row.gap:.6g} (stderr {row.gap_stderr:.2g})"
                f" verdict={row.verdict}"
            )
        print(f"drift_condition={rep.verdict}")
    return EXIT_OK


def cmd_calibrate(cfg, args):
    section = _require(cfg, "calibrate", "top level")
    table = _models_table(cfg)
    out = _out_dir(cfg, args)
    stream = _seed_stream(cfg, args)
    p_inf = _named_model(table, _require(section, "p_inf", "calibrate"), "calibrate")
    if "pair_file" in section:
        with open(section["pair_file"], "r", encoding="utf-8") as handle:
            pair = load_lfd_pair(json.load(handle))
    else:
        names = _require(section, "pair", "calibrate")
        from .lfd import LfdPair
        from .models import fisher_gaussian
        q_inf = _named_model(table, names["q_inf"], "calibrate.pair")
        q_post = _named_model(table, names["q_post"], "calibrate.pair")
        try:
            gap = fisher_gaussian(q_post, q_inf)
        except ModelError:
            gap = float(names.get("fisher_gap", 1.0))
        pair = LfdPair(q_inf, q_post, gap, names.get("provenance", "analytic"))
    sol = solve_rho_star(
        p_inf, pair, int(section.get("n", 200000)),
        stream.substream(1).generator(),
        tol=float(section.get("tol", 0.01)),
        method=section.get("method", "monte_carlo"),
    )
    gammas = section.get("gammas", [])
    thresholds = [
        {"gamma": float(g), "omega": threshold_for_arl(float(g), sol.rho_star)}
        for g in gammas
    ]
    payload = dump_rho_solution(sol)
    payload["thresholds"] = thresholds
    write_json(payload, os.path.join(out, "calibration.json"))
    print(f"rho_star={sol.rho_star:.10g} method={sol.method} degenerate={sol.degenerate}")
    for row in thresholds:
        print(f"gamma={row['gamma']:.10g} omega={row['omega']:.10g}")
    return EXIT_OK


def cmd_bench(cfg, args):
    section = _require(cfg, "bench", "top level")
    table = _models_table(cfg)
    out = _out_dir(cfg, args)
    stream = _seed_stream(cfg, args)
    from .bench import TrialSpec
    drift_lines = ["trial,pre_drift,pre_stderr,post_drift,post_stderr"]
    for i, trial in enumerate(_require(section, "trials", "bench")):
        name = _require(trial, "name", "bench.trials")
        detector = _detector_from(table, _require(trial, "detector", name), name)
        p_inf = _named_model(table, _require(trial, "p_inf", name), name)
        p_post = _named_model(table, _require(trial, "p_post", name), name)
        tstream = stream.substream(2, i)
        drift_n = int(trial.get("drift_n", 50000))
        pre = estimate_drift(p_inf, detector, drift_n, tstream.substream(0).generator())
        post = estimate_drift(p_post, detector, drift_n, tstream.substream(1).generator())
        drift_lines.append(
            f"{name},{pre[0]:.10g},{pre[1]:.10g},{post[0]:.10g},{post[1]:.10g}"
        )
        print(
            f"{name}: pre_drift={pre[0]:.6g} (stderr {pre[1]:.2g})"
            f" post_drift={post[0]:.6g} (stderr {post[1]:.2g})"
        )
        omegas = trial.get("omegas")
        if omegas:
            spec = TrialSpec(
                p_inf=p_inf,
                p_post=p_post,
                detector=detector,
                change_point=math.inf,
                paths=int(trial.get("arl_paths", 2000)),
                cap=int(trial.get("cap", 100000)),
                rng=tstream.substream(2),
            )
            rows = arl_edd_sweep(
                spec, np.asarray(omegas, float),
                arl_paths=int(trial.get("arl_paths", 2000)),
                edd_paths=int(trial.get("edd_paths", 5000)),
                workers=args.workers,
            )
            path = os.path.join(out, f"{name}_sweep.csv")
            write_sweep_csv(rows, path)
            print(f"{name}: wrote {len(rows)} sweep rows to {path}")
    with open(os.path.join(out, "drifts.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(drift_lines) + "\n")
    return EXIT_OK


def _parse_stream(handle):
    for lineno, line in enumerate(handle, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            vec = np.array([float(tok) for tok in text.replace(",", " ").split()])
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot parse observation vector") from None
        yield lineno, vec


def cmd_detect(cfg, args):
    section = _require(cfg, "detect", "top level")
    table = _models_table(cfg)
    detector = _detector_from(table, _require(section, "detector", "detect"),
                              "detect", omega=section["detector"].get("omega"))
    cap = int(section.get("cap", 10**9))
    stochastic = any(
        isinstance(m, ScoreMixture) and not m.has_exact_laplacian
        for m in (detector.model_inf, detector.model_post)
    )
    stream = _seed_stream(cfg, args, needed=stochastic)
    gen = stream.substream(4).generator() if stream is not None else None
    state = DetectorState()
    handle = open(args.input, "r", encoding="utf-8") if args.input else sys.stdin
    try:
        for lineno, vec in _parse_stream(handle):
            if vec.size != detector.model_inf.dim:
                raise ConfigError(
                    f"line {lineno}: expected dimension {detector.model_inf.dim},"
                    f" got {vec.size}"
                )
            step(detector, state, vec, rng=gen)
            if state.stopped_at is not None or state.n >= cap:
                break
    finally:
        if args.input:
            handle.close()
    if state.stopped_at is not None:
        print(f"stopped_at={state.stopped_at} statistic={state.statistic:.10g}")
    else:
        print(f"stopped_at=none steps={state.n} statistic={state.statistic:.10g}")
    return EXIT_OK


def cmd_sample(cfg, args):
    section = _require(cfg, "sample", "top level")
    table = _models_table(cfg)
    out = _out_dir(cfg, args)
    stream = _seed_stream(cfg, args)
    model = _named_model(table, _require(section, "model", "sample"), "sample")
    n = int(_require(section, "n", "sample"))
    kwargs = {}
    if "burn_in" in section:
        kwargs["burn_in"] = int(section["burn_in"])
    if "thin" in section:
        kwargs["thin"] = int(section["thin"])
    draws = model.sample(n, stream.substream(3).generator(), **kwargs)
    path = os.path.join(out, "samples.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in np.atleast_2d(draws):
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")
    print(f"wrote {n} samples to {path}")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="scoredetect",
        description="Score-based quickest change detection for unnormalized models",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker threads for path simulation")
    parser.add_argument("--out", help="output directory (default: config 'out' or '.')")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lfd", help="identify the least-favorable model pair")
    sub.add_parser("calibrate", help="solve for rho* and ARL thresholds")
    sub.add_parser("bench", help="run drift/ARL/EDD benchmarks")
    detect = sub.add_parser("detect", help="run the detector over a stream")
    detect.add_argument("--input", help="observation file (default: stdin)")
    sub.add_parser("sample", help="draw samples from a configured model")
    return parser


_COMMANDS = {
    "lfd": cmd_lfd,
    "calibrate": cmd_calibrate,
    "bench": cmd_bench,
    "detect": cmd_detect,
    "sample": cmd_sample,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, ModelError, DisjointnessError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DriftSignError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
