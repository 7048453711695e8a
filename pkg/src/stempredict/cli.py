"""Command-line entry point: ``stempredict <command> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench
from .channel_sim import ChannelTrace, add_awgn, read_trace_csv, write_trace_csv
from .errors import DegenerateInput, InvalidArgument, NotPositiveDefinite, SingularSystem
from .learning import Observations
from .selftest import run_selftest
from .stem_kernel import AntennaArray, GemHyper

SEED_ENV = "STEMPREDICT_SEED"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
_NUMERIC = (NotPositiveDefinite, SingularSystem, DegenerateInput, np.linalg.LinAlgError, ArithmeticError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, *, config_required=False):
    p.add_argument("--config", required=config_required, metavar="PATH",
                   help="key = value experiment config (see README for the schema)")
    p.add_argument("--seed", type=int, help=f"master seed (fallback: ${SEED_ENV}, then bench.seed)")
    p.add_argument("--out", metavar="PATH", help="output file, '-' for stdout")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="stempredict", description="Spatio-temporal GP channel prediction.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write one channel trace as CSV")
    _common(p)
    p.add_argument("--trial", type=int, default=0, help="trial index (selects the random draw)")
    p.add_argument("--speed", type=float, help="user speed in m/s (default: first bench.speeds)")
    p.add_argument("--snr-db", type=float, help="add pilot noise at this SNR and write the noisy trace")

    for name, desc in (("fit", "learn kernel hyperparameters from a pilot trace"),
                       ("predict", "predict future snapshots from a pilot trace")):
        p = sub.add_parser(name, help=desc)
        _common(p)
        p.add_argument("trace", help="pilot trace CSV (as written by 'simulate')")
        choices = ("gem_kl", "stem_kl") if name == "fit" else bench.PREDICTORS
        p.add_argument("--method", choices=choices, default="gem_kl")
        p.add_argument("--snr-db", type=float, help="pilot SNR (default: bench.horizon_snr_db)")
        if name == "predict":
            p.add_argument("--horizon", type=int, help="frames to predict (default: bench.F)")

    p = sub.add_parser("bench", help="Monte-Carlo NMSE sweep")
    p.add_argument("sweep", choices=("snr", "horizon"))
    _common(p, config_required=True)
    p.add_argument("--trials", type=int, help="override bench.trials")
    p.add_argument("--jobs", type=int, default=1, help="parallel trial workers")

    sub.add_parser("selftest", help="run the oracle and invariant checks")
    return ap


def _config(args) -> bench.ExperimentConfig:
    try:
        cfg = bench.load_config(args.config) if args.config else bench.ExperimentConfig()
    except InvalidArgument as exc:
        raise UsageError(f"--config: {exc}") from None
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV, "").strip():
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {os.environ[SEED_ENV]!r}") from None
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if getattr(args, "trials", None) is not None:
        cfg = replace(cfg, trials=args.trials)
    return cfg


def _array(cfg, n_el: int) -> AntennaArray:
    ch = cfg.channel
    if ch.n_bs != n_el:
        raise InvalidArgument(f"trace has {n_el} antennas but channel.n_bs = {ch.n_bs}")
    return ch.array()


def _noise_var(cfg, snr_db):
    return 10.0 ** (-(cfg.horizon_snr_db if snr_db is None else snr_db) / 10.0)


def _observations(cfg, trace: ChannelTrace, snr_db):
    coords = _array(cfg, trace.n_elements).coords(trace.times)
    return Observations(trace.snapshots.reshape(-1), coords, _noise_var(cfg, snr_db))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    speed = cfg.speeds[0] if args.speed is None else args.speed
    truth = bench.ground_truth(cfg, speed, args.trial)
    trace = ChannelTrace(truth, bench.frame_times(cfg))
    if args.snr_db is not None:
        noise = np.random.SeedSequence([cfg.seed, args.trial, 2])
        trace = add_awgn(trace, 10.0 ** (args.snr_db / 10.0), noise)
    write_trace_csv(trace, args.out or "-")
    return EXIT_OK


def _format_report(rep) -> str:
    h = rep.hyper
    lines = [f"iterations      {rep.iterations}",
             f"converged       {rep.converged}",
             f"jitter events   {rep.jitter_events}",
             f"objective       {rep.loglik_trace[0]:.6g} -> {rep.loglik_trace[-1]:.6g}"]
    if isinstance(h, GemHyper):
        lines.append(f"zeta2           {h.zeta2:.6g}")
        lines.append("top sub-kernels (weight, delta, v):")
        for n in np.argsort(-h.weights)[:5]:
            if h.weights[n] <= 0:
                break
            lines.append(f"  {h.weights[n]:.4f}  {np.round(h.deltas[n], 3)}  {np.round(h.vs[n], 3)}")
    else:
        lines += [f"zeta2           {h.zeta2:.6g}",
                  f"delta           {np.array2string(h.delta, precision=4)}",
                  f"v               {np.array2string(h.v, precision=4)}"]
    return "\n".join(lines)


def cmd_fit(args) -> int:
    cfg = _config(args)
    obs = _observations(cfg, read_trace_csv(args.trace), args.snr_db)
    report = _format_report(bench.fit_hyper(args.method, cfg, obs))
    if args.out and args.out != "-":
        with open(args.out, "w") as fh:
            fh.write(report + "\n")
    else:
        print(report)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args)
    trace = read_trace_csv(args.trace)
    horizon = cfg.F_future if args.horizon is None else args.horizon
    if horizon < 1:
        raise InvalidArgument("--horizon must be >= 1")
    obs = _observations(cfg, trace, args.snr_db)
    period = cfg.channel.pilot_period
    times = trace.times[-1] + period * np.arange(1, horizon + 1)
    future = _array(cfg, trace.n_elements).coords(times)
    noisy = ChannelTrace(trace.snapshots, trace.times, False)
    pred = bench.predict_with(args.method, cfg, noisy, obs, future, horizon)
    write_trace_csv(ChannelTrace(pred, times, False), args.out or "-")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    cfg = _config(args)
    run = bench.run_snr_sweep if args.sweep == "snr" else bench.run_horizon_sweep
    rows = run(cfg, jobs=args.jobs)
    bench.emit_csv(rows, args.out or cfg.output or "-")
    for r in rows:
        se_db = 10 * np.log10(1 + r.nmse_stderr / r.nmse_linear) if r.nmse_linear > 0 else float("nan")
        print(f"{r.predictor:>14} snr={r.snr_db:g} v={r.speed_mps:g} f={r.horizon}: "
              f"{r.nmse_db:8.3f} dB (+/- {se_db:.3f}) failures={r.failures}", file=sys.stderr)
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest()
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    passed = sum(r.passed for r in results)
    print(f"selftest: {passed}/{len(results)} invariants passed")
    return EXIT_OK if passed == len(results) else EXIT_NUMERIC


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "bench": cmd_bench, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, InvalidArgument, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(bench.schema_help(), file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
