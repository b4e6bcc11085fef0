"""Command-line interface: ``diffsurv {simulate,fit,km,bf,summarize}``.

Every output file starts with a ``# diffsurv <command> seed=<seed>`` comment
line. Failures print one JSON line ``{"error": ..., "message": ...}`` to
stderr, exit with status 2 and remove any files the command had written.
"""
from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, __doc__ as CONFIG_DOC
from .mcmc import FUNCTIONALS, run_chain
from .paths import euler_maruyama_simulate, make_grid, sample_noise
from .plotting import export_plot, read_curve_csv, read_km_csv, write_curve_csv, write_km_csv
from .summary import acf_ess, bayes_factor_prior_mc, curve_posterior_mean
from .survival import SurvivalDataset, kaplan_meier, simulate_survival_times, survival_curve
from .data import write_dataset_csv


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


class _Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self, out: Path):
        self.out = out
        self.created_dir = not out.exists()
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.files.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        if self.created_dir and self.out.exists() and not any(self.out.iterdir()):
            self.out.rmdir()


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", str(label))


def _header(cmd: str, seed: int) -> str:
    return f"diffsurv {cmd} seed={seed}"


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.from_dict({})
    if args.seed is not None:
        cfg = cfg.override(seed=args.seed)
    return cfg


# --- subcommands -----------------------------------------------------------------------------


def cmd_simulate(args, outs: _Outputs) -> dict:
    cfg = _load_config(args)
    cfg = cfg.override(**{"simulate.n": args.n, "simulate.censor": args.censor})
    model = cfg.build_model()
    if model.covariates is not None:
        raise CliError("simulate supports models without covariates")
    theta = cfg.simulate_theta(model)
    rng = np.random.default_rng(cfg["seed"])
    censor = float(cfg["simulate.censor"])
    if censor <= model.origin:
        raise CliError("simulate.censor must exceed the model's time origin")
    grid = make_grid(model.origin, censor, float(cfg["simulate.dt"]))
    sigma = model.sigma if model.sigma_known else 1.0
    path = euler_maruyama_simulate(model.drift, theta, sigma, model.x0_for(theta), grid, sample_noise(grid, rng))
    times, events = simulate_survival_times(path, model.hazard, int(cfg["simulate.n"]), censor, rng)
    hdr = _header("simulate", cfg["seed"])
    write_dataset_csv(SurvivalDataset.from_arrays(times, events), outs.path("data.csv"), hdr)
    surv = survival_curve(path, model.hazard)
    with outs.path("truth.csv").open("w", newline="") as fh:
        fh.write(f"# {hdr}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "state", "survival"])
        for t, x, s in zip(grid.nodes, path.values, surv.values):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(s))])
    return {"rows": len(times), "events": int(events.sum())}


def cmd_fit(args, outs: _Outputs) -> dict:
    cfg = _load_config(args)
    horizon = args.horizon
    if horizon is not None and horizon != "ymax":
        horizon = float(horizon)
    cfg = cfg.override(**{
        "sampler.iterations": args.iters,
        "sampler.burn_in": args.burnin,
        "sampler.dt": args.dt,
        "sampler.block_length": args.block,
        "sampler.parametrization": args.parametrization,
        "sampler.horizon": horizon,
    })
    data = cfg.load_data(args.data)
    model = cfg.build_model(data)
    sc = cfg.sampler_config()
    trace = run_chain(model, data, sc)
    hdr = _header("fit", sc.seed)
    names = list(model.param_names) + ([] if model.sigma_known else ["sigma"])
    with outs.path("trace.csv").open("w", newline="") as fh:
        fh.write(f"# {hdr}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *names, "loglik"])
        for k in range(len(trace)):
            row = [int(trace.iterations[k]), *map(float, trace.theta[k])]
            if trace.sigma is not None:
                row.append(float(trace.sigma[k]))
            row.append(float(trace.loglik[k]))
            w.writerow([row[0]] + [repr(v) for v in row[1:]])
    with outs.path("acceptance.csv").open("w", newline="") as fh:
        fh.write(f"# {hdr}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["update", "accepted", "attempted", "rate"])
        for k, (a, n) in trace.acceptance.items():
            w.writerow([k, a, n, repr(a / n) if n else "nan"])
    level = float(cfg["output.band_level"])
    written = {}
    if len(trace):
        for label, draws in trace.curves.items():
            for f in FUNCTIONALS:
                est = curve_posterior_mean(draws[f], trace.curve_times[label], level)
                p = outs.path(f"{f}_{_safe(label)}.csv")
                write_curve_csv(est, p, hdr)
                written.setdefault(f, {})[label] = p
    if cfg["output.plot"] and written:
        km_path = None
        if model.covariates is None and not model.pool_groups:
            km_path = outs.path("km.csv")
            write_km_csv({("all" if g is None else str(g)): kaplan_meier(sub) for g, sub in data.by_group().items()}, km_path, hdr)
        curves = {lab: read_curve_csv(p, level) for lab, p in written["survival"].items()}
        km = read_km_csv(km_path) if km_path else None
        export_plot(curves, outs.path("survival.svg"), km=km, ylabel="survival")
    return {"retained": len(trace), "acceptance": trace.acceptance_rates()}


def cmd_km(args, outs: _Outputs) -> dict:
    cfg = _load_config(args)
    data = cfg.load_data(args.data)
    curves = {("all" if g is None else str(g)): kaplan_meier(sub) for g, sub in data.by_group().items()}
    write_km_csv(curves, outs.path("km.csv"), _header("km", cfg["seed"]))
    return {"groups": list(curves)}


def cmd_bf(args, outs: _Outputs) -> dict:
    cfg1 = _load_config(args)
    if not args.config2:
        raise CliError("bf needs a second configuration (--config2)")
    cfg2 = RunConfig.from_file(args.config2)
    data = cfg1.load_data(args.data)
    n = args.samples if args.samples is not None else cfg1["bf.samples"]
    if n < 2:
        raise CliError("--samples must be at least 2")
    m1, m2 = cfg1.build_model(data), cfg2.build_model(data)
    res = bayes_factor_prior_mc(m1, m2, data, n, seed=cfg1["seed"], dt=float(cfg1["sampler.dt"]))
    if not res.ok:
        raise CliError(f"estimate failed: {res.message}")
    with outs.path("bf.csv").open("w", newline="") as fh:
        fh.write(f"# {_header('bf', cfg1['seed'])}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bf", "log_bf", "se_log_bf", "log_z1", "se_log_z1", "log_z2", "se_log_z2", "n_samples"])
        w.writerow([repr(v) for v in (res.bf, res.log_bf, res.se_log_bf, res.model_1.log_z, res.model_1.se,
                                       res.model_2.log_z, res.model_2.se)] + [n])
    return {"bf": res.bf, "log_bf": res.log_bf, "se_log_bf": res.se_log_bf}


def _read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise CliError(f"{path}: empty file")
    return rows[0], rows[1:]


def cmd_summarize(args, outs: _Outputs) -> dict:
    cfg = _load_config(args)
    trace_path = Path(args.trace)
    if not trace_path.exists():
        raise CliError(f"trace file {trace_path} not found")
    header, rows = _read_table(trace_path)
    cols = [c for c in header if c not in ("iteration", "loglik")]
    a = np.array(rows, dtype=float).reshape(len(rows), len(header))
    max_lag = min(args.max_lag, max(len(rows) - 1, 0))
    hdr = _header("summarize", cfg["seed"])
    diags = {c: acf_ess(a[:, header.index(c)], max_lag) for c in cols}
    with outs.path("diagnostics.csv").open("w", newline="") as fh:
        fh.write(f"# {hdr}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "n", "mean", "sd", "ess", "iat", "constant"])
        for c, d in diags.items():
            x = a[:, header.index(c)]
            w.writerow([c, d.n, repr(float(x.mean())), repr(float(x.std(ddof=1))), repr(d.ess), repr(d.iat), int(d.constant)])
    with outs.path("acf.csv").open("w", newline="") as fh:
        fh.write(f"# {hdr}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag", *cols])
        for lag in range(max_lag + 1):
            w.writerow([lag, *(repr(float(diags[c].acf[lag])) for c in cols)])
    acc = {}
    acc_path = trace_path.with_name("acceptance.csv")
    if acc_path.exists():
        _, acc_rows = _read_table(acc_path)
        acc = {r[0]: float(r[3]) for r in acc_rows}
    return {"ess": {c: d.ess for c, d in diags.items()}, "iat": {c: d.iat for c, d in diags.items()}, "acceptance": acc}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "km": cmd_km,
    "bf": cmd_bf,
    "summarize": cmd_summarize,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffsurv", description="Latent diffusion survival models: simulation, MCMC fitting, summaries.",
                epilog=CONFIG_DOC, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"diffsurv {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, help="64-bit random seed (overrides the config)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--config", help="run configuration file (key = value lines)")
        sp.formatter_class = argparse.RawDescriptionHelpFormatter
        sp.epilog = CONFIG_DOC

    sp = sub.add_parser("simulate", help="simulate censored survival data from a model")
    common(sp)
    sp.add_argument("--n", type=int, help="number of individuals")
    sp.add_argument("--censor", type=float, help="common censoring time")

    sp = sub.add_parser("fit", help="run the MCMC sampler and export traces and curves")
    common(sp)
    sp.add_argument("--data", help="'leukemia' or a CSV file (time,status[,group][,covariates])")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--burnin", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--block", type=float, help="block length for path updates")
    sp.add_argument("--parametrization", choices=("centered", "pnc", "ncp"))
    sp.add_argument("--horizon", help="time horizon T (number) or 'ymax'")

    sp = sub.add_parser("km", help="Kaplan-Meier estimate per group")
    common(sp)
    sp.add_argument("--data", help="'leukemia' or a CSV file")

    sp = sub.add_parser("bf", help="prior Monte Carlo Bayes factor of two configurations")
    common(sp)
    sp.add_argument("--config2", help="configuration of the second model")
    sp.add_argument("--data", help="'leukemia' or a CSV file")
    sp.add_argument("--samples", type=int, help="prior draws per model")

    sp = sub.add_parser("summarize", help="ACF, ESS, IAT and acceptance rates of a trace")
    common(sp)
    sp.add_argument("--trace", required=True, help="trace.csv written by fit")
    sp.add_argument("--max-lag", type=int, default=100)
    return p


def main(argv=None) -> int:
    outs = None
    try:
        args = build_parser().parse_args(argv)
        outs = _Outputs(Path(args.out))
        result = COMMANDS[args.command](args, outs)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error line
        if outs is not None:
            outs.cleanup()
        msg = str(exc).replace("\n", " ")
        print(json.dumps({"error": type(exc).__name__, "message": msg}), file=sys.stderr)
        return 2
    print(json.dumps({"command": args.command, "out": str(outs.out), "files": [p.name for p in outs.files], **result},
                     default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
