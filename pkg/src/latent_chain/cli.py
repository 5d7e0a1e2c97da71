"""Command-line interface.

Exit codes: 0 ok, 2 malformed input file or arguments, 3 validation failure,
4 I/O error, 5 numerical/EM failure (including a failed ``check``), 6 oracle
size guard exceeded.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import compare as compare_mod
from .em import EmConfig, em_fit, init_hmm_from_data, init_lgssm_from_data
from .hmm import ZeroProbabilityError, posterior_marginals
from .io import (
    ModelFileError,
    atomic_write_text,
    dumps_model,
    load_model,
    read_sequence_csv,
    write_sequence_csv,
    write_table_csv,
)
from .kalman import KalmanNumericalError, kalman_smoother, moments_from_smoother
from .models import (
    ContinuousSsmParams,
    DiscreteSsmParams,
    HmmParams,
    InvalidModelError,
    LgssmParams,
    ensure_hmm,
    ensure_lgssm,
    sample_hmm,
    sample_lgssm,
)
from .nlp_ssm import DiscretizationError, convolution_kernel, discretize, scan
from .oracles import OracleGuardError, hmm_enumerate, lgssm_exact_joint

log = logging.getLogger("latent_chain")

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC, EXIT_GUARD = 0, 2, 3, 4, 5, 6
CHECK_TOL = 1e-8


def sidecar(out, suffix: str) -> Path:
    out = Path(out)
    return out.with_name(out.name + suffix)


class Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, args):
        self.args = args
        self.inputs: dict = {}
        self.artifacts: list = []
        self.config: dict = {}
        self.start = time.perf_counter()

    def read(self, path) -> str:
        path = str(path)
        if path not in self.inputs:
            try:
                self.inputs[path] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
            except OSError:
                pass
        return path

    def wrote(self, path) -> None:
        self.artifacts.append(str(path))

    def manifest(self, exit_code: int) -> dict:
        resolved = {k: v for k, v in vars(self.args).items() if k != "func"}
        resolved.update(self.config)
        return {
            "command": self.args.command,
            "config": resolved,
            "input_digests": self.inputs,
            "seed": getattr(self.args, "seed", None),
            "artifacts": self.artifacts,
            "exit_code": exit_code,
            "duration_s": time.perf_counter() - self.start,
        }


def _load(run: Run, path):
    return load_model(run.read(path))


def _read_seq(run: Run, path):
    data = read_sequence_csv(run.read(path))
    if len(data) == 0:
        raise InvalidModelError([f"{path}: sequence is empty"])
    return data


def _hmm_obs(params: HmmParams, data):
    if params.emission_family == "categorical":
        if not data.categorical:
            raise InvalidModelError(["categorical HMM needs a single integer 'y' column"])
        return data.y
    if data.categorical:
        return data.y.astype(float)[:, None]
    return data.y


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(args, run: Run) -> int:
    params = _load(run, args.model)
    if args.length < 1:
        raise InvalidModelError([f"length must be >= 1, got {args.length}"])
    out = Path(args.out)
    states_path = sidecar(out, ".states.csv")
    if isinstance(params, HmmParams):
        ensure_hmm(params)
        h, y = sample_hmm(params, args.length, args.seed)
        write_sequence_csv(out, y, categorical=params.emission_family == "categorical")
        write_table_csv(states_path, ["state"], [[int(v)] for v in h])
    elif isinstance(params, LgssmParams):
        ensure_lgssm(params, require_definite_r=False)
        x = None
        if params.input_dim:
            if args.data is None:
                x = np.zeros((args.length, params.input_dim))
            else:
                x = _read_seq(run, args.data).x
                if x is None or len(x) < args.length:
                    raise InvalidModelError(["input CSV must supply x columns for every step"])
                x = x[: args.length]
        h, y = sample_lgssm(params, x, args.seed, length=args.length)
        write_sequence_csv(out, y, x)
        write_table_csv(states_path, [f"h{i}" for i in range(h.shape[1])], h.tolist())
    elif isinstance(params, DiscreteSsmParams):
        if args.data is None:
            raise InvalidModelError(["a discrete SSM is driven by inputs; pass --data with x columns"])
        x = _read_seq(run, args.data).x
        if x is None:
            raise InvalidModelError(["input CSV has no x columns"])
        x = x[: args.length]
        h, y = scan(params, x)
        write_sequence_csv(out, y, x)
        write_table_csv(states_path, [f"h{i}" for i in range(h.shape[1])], h.tolist())
    else:
        raise InvalidModelError(["continuous-time models cannot be simulated; discretize first"])
    run.wrote(out)
    run.wrote(states_path)
    return EXIT_OK


def _em_config(args) -> EmConfig:
    base = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(base, dict):
            raise ModelFileError(f"{args.config}: EM config must be a JSON object")
        base = base.get("em", base)
    for key in ("max_iters", "rel_tol", "min_variance_floor", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    try:
        return EmConfig(**base)
    except TypeError as exc:
        raise ModelFileError(f"unknown EM config field: {exc}") from None
    except ValueError as exc:
        raise InvalidModelError([str(exc)]) from None


def cmd_fit(args, run: Run) -> int:
    config = _em_config(args)
    run.config["em"] = asdict(config)
    datasets = [_read_seq(run, p) for p in args.data]
    if args.model == "auto":
        if args.family == "hmm":
            if not args.states:
                raise InvalidModelError(["--states is required with --model auto"])
            categorical = datasets[0].categorical if args.emission is None else args.emission == "categorical"
            seqs = [d.y if categorical else d.y.reshape(len(d), -1).astype(float) for d in datasets]
            init = init_hmm_from_data(seqs, args.states, "categorical" if categorical else "gaussian",
                                      config.seed, args.alphabet)
        else:
            if not args.dim:
                raise InvalidModelError(["--dim is required with --model auto"])
            d = 0 if datasets[0].x is None else datasets[0].x.shape[1]
            init = init_lgssm_from_data([np.asarray(x.y, dtype=float) for x in datasets], args.dim,
                                        config.seed, input_dim=d)
    else:
        init = _load(run, args.model)
        expected = HmmParams if args.family == "hmm" else LgssmParams
        if not isinstance(init, expected):
            raise InvalidModelError([f"init model is not a {args.family} model"])

    if args.family == "hmm":
        ensure_hmm(init)
        data = [_hmm_obs(init, d) for d in datasets]
        report = em_fit("hmm", init, data, config)
    else:
        ensure_lgssm(init)
        data = [np.asarray(d.y, dtype=float).reshape(len(d), -1) for d in datasets]
        inputs = [d.x for d in datasets] if init.input_dim else None
        report = em_fit("lgssm", init, data, config, inputs)

    out = Path(args.out)
    atomic_write_text(out, dumps_model(report.final_params))
    run.wrote(out)
    trace_path = sidecar(out, ".trace.csv")
    write_table_csv(trace_path, ["iteration", "log_likelihood"],
                    [[i, float(v)] for i, v in enumerate(report.log_likelihood_trace)])
    run.wrote(trace_path)
    run.config["em_result"] = {"iterations": report.iterations, "stop_reason": report.stop_reason,
                               "converged": report.converged, "error": report.error}
    if report.faulted:
        print(f"EM stopped: {report.stop_reason}: {report.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_infer(args, run: Run) -> int:
    params = _load(run, args.model)
    data = _read_seq(run, args.data)
    out = Path(args.out)
    if isinstance(params, HmmParams):
        if args.mode not in (None, "marginals"):
            raise InvalidModelError(["HMMs support --mode marginals only"])
        ensure_hmm(params)
        post = posterior_marginals(params, _hmm_obs(params, data))
        K = params.num_states
        write_table_csv(out, [f"gamma{i}" for i in range(K)], post.gamma.tolist())
        xi_path = sidecar(out, ".xi.csv")
        header = ["step"] + [f"xi_{i}_{j}" for i in range(K) for j in range(K)]
        write_table_csv(xi_path, header,
                        [[k + 2, *map(float, post.xi[k].reshape(-1))] for k in range(len(post.xi))])
        run.wrote(xi_path)
        run.config["log_likelihood"] = post.log_likelihood
    elif isinstance(params, LgssmParams):
        if args.mode not in (None, "moments"):
            raise InvalidModelError(["LG-SSMs support --mode moments only"])
        ensure_lgssm(params)
        fr, sm, gains = kalman_smoother(params, data.y, data.x if params.input_dim else None)
        s = params.state_dim
        var = np.diagonal(sm.cov, axis1=1, axis2=2)
        write_table_csv(out, [f"mean{i}" for i in range(s)] + [f"var{i}" for i in range(s)],
                        np.hstack([sm.mean, var]).tolist())
        run.config["log_likelihood"] = fr.log_likelihood
    else:
        raise InvalidModelError(["inference needs an hmm or lgssm model"])
    run.wrote(out)
    return EXIT_OK


def cmd_discretize(args, run: Run) -> int:
    params = _load(run, args.model)
    if not isinstance(params, ContinuousSsmParams):
        raise InvalidModelError(["discretize needs an ssm_continuous model"])
    if not args.dt > 0:
        raise InvalidModelError([f"--dt must be positive, got {args.dt}"])
    try:
        disc = discretize(params, args.dt, args.rule)
    except DiscretizationError as exc:
        raise InvalidModelError([str(exc)]) from None
    atomic_write_text(args.out, dumps_model(disc))
    run.wrote(args.out)
    return EXIT_OK


def cmd_kernel(args, run: Run) -> int:
    params = _load(run, args.model)
    if not isinstance(params, DiscreteSsmParams):
        raise InvalidModelError(["kernel needs an ssm_discrete model"])
    if args.length < 1:
        raise InvalidModelError([f"--length must be >= 1, got {args.length}"])
    kernel = convolution_kernel(params, args.length)
    atomic_write_text(args.out, json.dumps(kernel.to_json()) + "\n")
    run.wrote(args.out)
    return EXIT_OK


def _max_abs(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def cmd_check(args, run: Run) -> int:
    params = _load(run, args.model)
    data = _read_seq(run, args.data)
    if isinstance(params, HmmParams):
        ensure_hmm(params)
        obs = _hmm_obs(params, data)
        oracle = hmm_enumerate(params, obs)
        post = posterior_marginals(params, obs)
        dev = {"gamma": _max_abs(post.gamma, oracle.marginals),
               "xi": _max_abs(post.xi, oracle.pairwise),
               "log_evidence": abs(post.log_likelihood - oracle.log_evidence)}
    elif isinstance(params, LgssmParams):
        ensure_lgssm(params)
        x = data.x if params.input_dim else None
        joint = lgssm_exact_joint(params, x, len(data))
        fr, sm, gains = kalman_smoother(params, data.y, x)
        mom = moments_from_smoother(sm, gains)
        means, covs, cross = joint.smoothed(data.y)
        dev = {"means": _max_abs(sm.mean, means), "covariances": _max_abs(sm.cov, covs),
               "cross_moments": _max_abs(mom.cross, cross),
               "log_evidence": abs(fr.log_likelihood - joint.log_evidence(data.y))}
    else:
        raise InvalidModelError(["check needs an hmm or lgssm model"])
    ok = all(v <= CHECK_TOL for v in dev.values())
    for name, v in dev.items():
        print(f"{name:<14} max_abs_dev={v:.3e}  {'PASS' if v <= CHECK_TOL else 'FAIL'}")
    print(f"overall: {'PASS' if ok else 'FAIL'} (tolerance {CHECK_TOL:g})")
    run.config["deviations"] = dev
    if args.out:
        atomic_write_text(args.out, json.dumps({"deviations": dev, "tolerance": CHECK_TOL,
                                                "passed": ok}, indent=2) + "\n")
        run.wrote(args.out)
    return EXIT_OK if ok else EXIT_NUMERIC


def _jsonable(obj):
    if isinstance(obj, (HmmParams, LgssmParams)):
        return json.loads(dumps_model(obj))
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def cmd_compare(args, run: Run) -> int:
    config = _em_config(args)
    datasets = [_read_seq(run, p) for p in args.data]
    seqs = [np.asarray(d.y, dtype=float).reshape(len(d), -1) for d in datasets]
    result = compare_mod.compare_families(seqs, args.states, args.dim, config)
    sys.stdout.write(compare_mod.format_report(result))
    if args.out:
        atomic_write_text(args.out, json.dumps(_jsonable(result), indent=2, ensure_ascii=False) + "\n")
        run.wrote(args.out)
    if all(row["status"] == "error" for row in result["fits"].values()):
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _add_em_flags(p):
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.add_argument("--variance-floor", dest="min_variance_floor", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file holding an EM config object (optionally under 'em')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latent-chain",
                                     description="HMM, LG-SSM and deterministic SSM toolkit")
    parser.add_argument("--manifest", help="where to write the run manifest "
                                           "(default: <out>.manifest.json, or stderr)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a sequence from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", help="input CSV (x columns) for models with inputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model by EM")
    p.add_argument("--family", choices=("hmm", "lgssm"), required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--model", default="auto", help="initial model JSON or 'auto'")
    p.add_argument("--states", type=int, help="number of HMM states (auto init)")
    p.add_argument("--dim", type=int, help="LG-SSM state dimension (auto init)")
    p.add_argument("--emission", choices=("categorical", "gaussian"))
    p.add_argument("--alphabet", type=int, help="categorical alphabet size (auto init)")
    p.add_argument("--out", required=True)
    _add_em_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="posterior marginals (HMM) or smoothed moments (LG-SSM)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("marginals", "moments"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("discretize", help="discretize a continuous-time SSM")
    p.add_argument("--model", required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--rule", choices=("zoh", "bilinear"), default="zoh")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_discretize)

    p = sub.add_parser("kernel", help="export the convolution kernel of a discrete SSM")
    p.add_argument("--model", required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("check", help="compare fast inference against the brute-force oracle")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("compare", help="fit HMM and LG-SSM to the same data; print the comparison table")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--states", "--hmm-states", dest="states", type=int, default=2)
    p.add_argument("--dim", "--lgssm-dim", dest="dim", type=int, default=1)
    p.add_argument("--out")
    _add_em_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def _configure_logging():
    level = os.environ.get("LATENT_CHAIN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    run = Run(args)
    try:
        code = args.func(args, run)
    except ModelFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_PARSE
    except InvalidModelError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    except OracleGuardError as exc:
        print(f"oracle guard: {exc}", file=sys.stderr)
        code = EXIT_GUARD
    except (ZeroProbabilityError, KalmanNumericalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        code = EXIT_IO
    except ValueError as exc:
        # shape/dimension mismatches between model and data
        print(f"validation failed: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    manifest = json.dumps(run.manifest(code), indent=2, default=str)
    target = args.manifest or (sidecar(args.out, ".manifest.json") if getattr(args, "out", None) else None)
    if target is not None:
        try:
            atomic_write_text(target, manifest + "\n")
        except OSError:
            print(manifest, file=sys.stderr)
    else:
        print(manifest, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
