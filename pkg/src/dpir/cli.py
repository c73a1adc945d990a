"""Command-line entry point: ``dpir <subcommand>``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import costmodel, verify
from .config import ConfigError, ExperimentConfig, load_config
from .estimators import build_stack
from .metrics import evaluate
from .oracle import rng_stream
from .sampler import compare_starts, run_sampler, sweep_tau
from .schedule import VarianceParam, build_linear_schedule, format_float


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_once(path: Path, text: str) -> None:
    """Write via a temporary file and rename, so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _num(v):
    """JSON-safe float: non-finite values become strings."""
    v = float(v)
    if math.isfinite(v):
        return v
    return "inf" if v > 0 else ("-inf" if v < 0 else "nan")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- experiment plumbing ----------------------------------------------------

def _setup(cfg: ExperimentConfig, cfg_path: Path):
    s = cfg.build_schedule()
    world = cfg.build_world(cfg_path.parent)
    sc = cfg.sampler_config()
    est = cfg.estimators
    try:
        stack = build_stack(world, s, est.denoiser, est.restorer, est.fuser, tau=sc.tau)
    except ValueError as exc:
        raise ConfigError(f"estimators: {exc}") from exc
    obs = cfg.observations
    if obs.count < 1:
        raise ConfigError("observations.count must be positive")
    x0s, ys = world.draw_pairs(rng_stream(obs.seed, 100), obs.count)
    return s, world, sc, stack, x0s, ys


def _out_dir(cfg: ExperimentConfig, args, cfg_path: Path) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    out = Path(cfg.output_dir)
    return out if out.is_absolute() else cfg_path.parent / out


def trace_csv(trace) -> str:
    buf = io.StringIO()
    n = trace.x0_final.shape[-1]
    buf.write("step_index,t,nfe_denoiser,nfe_fuser," + ",".join(f"x[{i}]" for i in range(n)) + "\n")
    for i, (t, x, nd, nf) in enumerate(trace.states):
        first = np.asarray(x).reshape(-1, n)[0]  # chain 0 only
        buf.write(f"{i},{t},{nd},{nf}," + ",".join(format_float(v) for v in first) + "\n")
    return buf.getvalue()


def cmd_sample(args) -> int:
    cfg_path = Path(args.config)
    cfg = load_config(cfg_path)
    s, world, sc, stack, x0s, ys = _setup(cfg, cfg_path)
    if len(ys) != 1:
        raise ConfigError("observations.count must be 1 for 'sample'; use sweep-tau for several")
    t0 = time.perf_counter()
    trace = run_sampler(stack, ys[0], sc, s, record=True)
    runtime_ms = (time.perf_counter() - t0) * 1e3
    rep = evaluate(np.broadcast_to(x0s[0], trace.x0_final.shape), trace.x0_final)
    summary = {
        "config_hash": cfg.config_hash(),
        "seed": sc.seed,
        "mode": sc.mode.value,
        "tau": sc.tau,
        "num_samples": sc.num_samples,
        "nfe_total": trace.nfe_total,
        "nfe_denoiser": trace.nfe_denoiser,
        "nfe_fuser": trace.nfe_fuser,
        "nfe_restorer": trace.nfe_restorer,
        "mse": _num(rep.mse),
        "psnr_db": _num(rep.psnr_db),
        "flags": trace.flags,
        "x0_final_mean": [_num(v) for v in trace.x0_final.mean(axis=0)],
        "restorer_cache": [_num(v) for v in np.ravel(trace.restorer_cache)],
        "runtime_ms": round(runtime_ms, 3),
    }
    out = _out_dir(cfg, args, cfg_path)
    _write_once(out / "trace.csv", trace_csv(trace))
    _write_once(out / "summary.json", _dumps(summary))
    print(f"nfe_total={trace.nfe_total} mse={format_float(rep.mse)} -> {out}")
    return 0


def cmd_sweep_tau(args) -> int:
    cfg_path = Path(args.config)
    cfg = load_config(cfg_path)
    s, world, sc, stack, x0s, ys = _setup(cfg, cfg_path)
    try:
        taus = [int(v) for v in args.taus.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--taus must be a comma-separated list of integers: {exc}") from exc
    if not taus or any(not 0 <= t <= s.T for t in taus):
        raise UsageError(f"--taus entries must lie in [0, {s.T}]")
    rows = sweep_tau(stack, world, x0s, ys, taus, sc, s)
    buf = io.StringIO()
    buf.write("tau,mse,mse_stderr,nfe\n")
    for r in rows:
        buf.write(f"{r.tau},{format_float(r.mse)},{format_float(r.mse_stderr)},{r.nfe}\n")
    out = _out_dir(cfg, args, cfg_path)
    _write_once(out / "sweep_tau.csv", buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_compare_starts(args) -> int:
    cfg_path = Path(args.config)
    cfg = load_config(cfg_path)
    s, world, sc, stack, x0s, ys = _setup(cfg, cfg_path)
    res = compare_starts(stack, world, x0s, ys, sc, s)
    payload = {
        "config_hash": cfg.config_hash(),
        "seed": sc.seed,
        "tau": res.tau,
        "nfe": res.nfe,
        "mse_proposed": _num(res.mse_proposed),
        "mse_baseline": _num(res.mse_baseline),
        "mean_paired_diff": _num(res.mean_paired_diff),
        "paired_diff_stderr": _num(res.paired_diff_stderr),
    }
    out = _out_dir(cfg, args, cfg_path)
    _write_once(out / "compare_starts.json", _dumps(payload))
    sys.stdout.write(_dumps(payload))
    return 0


def cmd_schedule(args) -> int:
    try:
        s = build_linear_schedule(args.T, args.beta_start, args.beta_end, VarianceParam(args.variance_param))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    text = s.to_csv()
    if args.out:
        _write_once(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_cost(args) -> int:
    given = [args.per_nfe, args.fixed, args.nfe]
    if any(v is not None for v in given):
        if args.per_nfe is None or args.nfe is None:
            raise UsageError("--per-nfe and --nfe are required together (--fixed defaults to 0)")
        try:
            m = costmodel.CostModel(args.per_nfe, args.fixed or 0.0)
            rows = [{
                "method": args.label,
                "per_nfe_tflop": m.per_nfe_tflop,
                "fixed_tflop": m.fixed_tflop,
                "nfe": args.nfe,
                "total_tflop": costmodel.total_cost(m, args.nfe),
            }]
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        rows = costmodel.cost_table()
    sys.stdout.write(json.dumps(rows, indent=2) + "\n")
    return 0


def cmd_verify(args) -> int:
    fn = verify.SUITES[args.suite]
    kwargs = {"seed": args.seed}
    if args.suite != "trace":
        kwargs["T"] = args.T
    if args.config:
        tol = load_config(Path(args.config)).tolerances
        extra = {
            "lemma1": {"tol": tol.score_abs},
            "lemma2": {"tol": tol.merged_rel},
            "prop1": {"n_se": tol.mc_se},
            "trace": {"n_se": tol.mc_se},
            "ddim": {"z_max": tol.z_max, "var_tol": tol.var_ratio},
        }[args.suite]
        kwargs.update(extra)
    res = fn(**kwargs)
    print(res.line())
    if res.passed and args.out:
        payload = {"suite": res.name, "passed": res.passed,
                   "metrics": {k: (_num(v) if isinstance(v, float) else v) for k, v in res.metrics.items()}}
        _write_once(Path(args.out), _dumps(payload))
    return 0 if res.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpir", description="Conditional diffusion sampling on linear-Gaussian worlds.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sp = sub.add_parser("schedule", help="dump the noise schedule as CSV")
    sp.add_argument("--T", type=int, default=1000)
    sp.add_argument("--beta-start", type=float, default=1e-4)
    sp.add_argument("--beta-end", type=float, default=2e-2)
    sp.add_argument("--variance-param", choices=[v.value for v in VarianceParam], default="beta")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_schedule)

    sp = sub.add_parser("verify", help="run a numerical property suite")
    sp.add_argument("suite", choices=sorted(verify.SUITES))
    sp.add_argument("--T", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--config", help="take tolerances from this experiment config")
    sp.add_argument("--out", help="write a JSON report here (only when the suite passes)")
    sp.set_defaults(func=cmd_verify)

    for name, func, hlp in (
        ("sample", cmd_sample, "one sampling run: trace CSV + summary JSON"),
        ("sweep-tau", cmd_sweep_tau, "MSE / NFE for several activation steps"),
        ("compare-starts", cmd_compare_starts, "merged-jump start vs forward-diffused start"),
    ):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        if name == "sweep-tau":
            sp.add_argument("--taus", default="0,5,50,100,150,250")
        sp.set_defaults(func=func)

    sp = sub.add_parser("cost", help="TFLOP cost table")
    sp.add_argument("--per-nfe", type=float)
    sp.add_argument("--fixed", type=float)
    sp.add_argument("--nfe", type=int)
    sp.add_argument("--label", default="custom")
    sp.set_defaults(func=cmd_cost)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dpir: error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
