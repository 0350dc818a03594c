"""Command-line experiment runner for the queueing benchmark.

Every output file starts with ``#`` comment lines recording the tool
version, the command, the root seed, the preset and the fully resolved
configuration; the CSV body below depends only on those inputs.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import InputError
from .mdp import (
    batch_means_stderr,
    policy_from_theta,
    simulate_losses,
    stationary_distribution,
)
from .oracle import DENSE_LP_LIMIT, relative_value_iteration, solve_dual_lp_exact
from .queueing import (
    NUM_ACTIONS,
    QueueNetConfig,
    build_features,
    build_queue_mdp,
    heuristic_policy,
    queue_sampling,
)
from .sampling import (
    CsConfig,
    audit_csv,
    constraint_sampling_sweep,
    ladder_counts,
    run_constraint_sampling,
)
from .sgd import SgdConfig, run_sgd

PAPER_LADDER = (508, 792, 1235, 1926, 3003, 4684, 7305, 11393, 17768, 27712)
REDUCED_LADDER = (16, 40, 100, 250, 625)
FULL_SCALE_MAX_PAIRS = 5_000_000

QUEUE_KEYS = {"a1": float, "a3": float, "d1": float, "d2": float, "d3": float, "d4": float,
              "B1": int, "B2": int, "B3": int, "B4": int}
SECTION_DEFAULTS = {
    "sgd": {
        "T": (int, 20000), "H": (float, 1.0), "eta0": (float, 0.01),
        "halving_period": (int, 5000), "S": (float, 2.0), "batch_size": (int, 10),
        "checkpoint_every": (int, 1000), "epsilon": (float, 0.1), "sampler": (str, "uniform"),
    },
    "cs": {
        "M": (float, 3.0), "eps_s": (float, 1e-3), "v1": (float, 0.0), "k1": (int, 250),
        "trials": (int, 20), "sim_horizon": (int, 100_000), "burn_in": (int, 10_000),
        "sampler": (str, "uniform"), "ladder": (str, ""),
    },
    "evaluate": {"sim_horizon": (int, 200_000), "burn_in": (int, 20_000)},
}
PRESETS = {
    "run-sgd": ("halving", "theorem1"),
    "run-cs": ("reduced-ladder", "paper-ladder"),
    "evaluate": ("halving", "theorem1"),
}


class Settings:
    """Resolved configuration: queue parameters plus one dict per section."""

    def __init__(self, queue, sections):
        self.queue = queue
        self.sections = sections

    def __getitem__(self, name):
        return self.sections[name]

    def header_lines(self):
        lines = ["[queue] " + " ".join(f"{k}={v!r}" for k, v in self.queue.as_dict().items())]
        for name in sorted(self.sections):
            vals = self.sections[name]
            lines.append(f"[{name}] " + " ".join(f"{k}={vals[k]!r}" for k in sorted(vals)))
        return lines


def _convert(kind, raw, section, key):
    try:
        return kind(raw)
    except ValueError:
        raise InputError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def load_settings(path=None, full_scale=False):
    """Read an INI config; missing keys fall back to the benchmark defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case sensitive (B1 vs b1)
    if path is not None:
        if not os.path.exists(path):
            raise InputError(f"config file {path!r} not found")
        parser.read(path)
    known = {"queue", *SECTION_DEFAULTS}
    for name in parser.sections():
        if name not in known:
            raise InputError(f"unknown config section [{name}]")
    qkw = {}
    if parser.has_section("queue"):
        for key, raw in parser.items("queue"):
            if key not in QUEUE_KEYS:
                raise InputError(f"unknown key {key!r} in [queue]")
            qkw[key] = _convert(QUEUE_KEYS[key], raw, "queue", key)
    queue = QueueNetConfig(**qkw) if full_scale else QueueNetConfig.reduced(**qkw)
    sections = {}
    for name, spec in SECTION_DEFAULTS.items():
        vals = {k: default for k, (_, default) in spec.items()}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in spec:
                    raise InputError(f"unknown key {key!r} in [{name}]")
                vals[key] = _convert(spec[key][0], raw, name, key)
        sections[name] = vals
    return Settings(queue, sections)


# ---------------------------------------------------------------------------
# benchmark assembly


class Benchmark:
    def __init__(self, settings, full_scale=False):
        self.settings = settings
        cfg = settings.queue
        max_pairs = FULL_SCALE_MAX_PAIRS if full_scale else None
        self.model = build_queue_mdp(cfg) if max_pairs is None else build_queue_mdp(cfg, max_pairs)
        self.heuristics = {k: heuristic_policy(k, cfg) for k in ("LONGER", "LBFS")}
        self.heuristic_mus = [stationary_distribution(self.model, p) for p in self.heuristics.values()]
        self.features, self.labels = build_features(cfg, self.model, self.heuristic_mus)

    def sampling(self, kind):
        return queue_sampling(self.features, kind)


def sgd_config(settings, preset, seed, sampling, d):
    s = settings["sgd"]
    if preset == "theorem1":
        return SgdConfig.theorem1(
            s["epsilon"], s["S"], d, sampling.C1, sampling.C2, seed=seed,
            checkpoint_every=s["checkpoint_every"], batch_size=s["batch_size"],
        )
    return SgdConfig.halving(
        T=s["T"], H=s["H"], eta0=s["eta0"], period=s["halving_period"], S=s["S"], seed=seed,
        checkpoint_every=s["checkpoint_every"], batch_size=s["batch_size"],
    )


def cs_base(settings):
    s = settings["cs"]
    return CsConfig(k1=1, k2=1, v1=s["v1"], M=s["M"], eps_s=s["eps_s"])


# ---------------------------------------------------------------------------
# output


def write_output(path, args, settings, preset, body):
    """Write the reproducibility header followed by the CSV (or text) body."""
    header = [
        f"# dualalp {__version__}",
        f"# command: {args.command}",
        f"# seed: {args.seed}",
        f"# preset: {preset}",
        f"# full_scale: {bool(args.full_scale)}",
    ]
    header.extend(f"# {line}" for line in settings.header_lines())
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(header) + "\n")
        fh.write(body)
    return path


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def cmd_run_sgd(args, settings, preset):
    bench = Benchmark(settings, args.full_scale)
    sampling = bench.sampling(settings["sgd"]["sampler"])
    config = sgd_config(settings, preset, args.seed, sampling, bench.features.dim)
    theta, trace = run_sgd(config, bench.features, sampling)
    write_output(os.path.join(args.out, "sgd_trace.csv"), args, settings, preset, trace.to_csv())
    body = csv_text(["theta"], [[float(v)] for v in theta])
    write_output(os.path.join(args.out, "theta_hat.csv"), args, settings, preset, body)
    print(f"T={config.T} surrogate={trace.surrogate[-1]!r} objective={trace.objective[-1]!r}")


_WORKER = {}


def _worker_init(settings, full_scale, sampler):
    bench = Benchmark(settings, full_scale)
    _WORKER["bench"] = bench
    _WORKER["sampling"] = bench.sampling(sampler)


def _worker_trial(task):
    k, k1, k2, seed, base, horizon, burn_in = task
    bench, sampling = _WORKER["bench"], _WORKER["sampling"]
    results = constraint_sampling_sweep(
        bench.model, bench.features, sampling, [(k1, k2)], 1, root_seed=seed, base=base,
        sim_horizon=horizon, burn_in=burn_in,
    )
    _, audit, loss = results[0]
    return k, audit, loss


def cmd_run_cs(args, settings, preset):
    s = settings["cs"]
    trials = args.trials if args.trials is not None else s["trials"]
    if s["ladder"].strip():
        k1_values = [int(v) for v in s["ladder"].split(",")]
    else:
        k1_values = PAPER_LADDER if preset == "paper-ladder" else REDUCED_LADDER
    ladder = ladder_counts(k1_values, NUM_ACTIONS)
    base = cs_base(settings)
    if args.workers > 1:
        tasks = []
        k = 0
        for k1, k2 in ladder:
            for _ in range(trials):
                tasks.append((k, k1, k2, args.seed + k, base, s["sim_horizon"], s["burn_in"]))
                k += 1
        with ProcessPoolExecutor(
            args.workers, initializer=_worker_init, initargs=(settings, args.full_scale, s["sampler"])
        ) as pool:
            results = list(pool.map(_worker_trial, tasks))
    else:
        bench = Benchmark(settings, args.full_scale)
        results = constraint_sampling_sweep(
            bench.model, bench.features, bench.sampling(s["sampler"]), ladder, trials,
            root_seed=args.seed, base=base, sim_horizon=s["sim_horizon"], burn_in=s["burn_in"],
        )
    write_output(os.path.join(args.out, "cs_audit.csv"), args, settings, preset, audit_csv(results))
    print(f"{len(results)} trials over {len(ladder)} sample sizes")


EVAL_HEADER = ("policy", "avg_loss_exact", "avg_loss_simulated", "stderr", "avg_queue_length")


def cmd_evaluate(args, settings, preset):
    bench = Benchmark(settings, args.full_scale)
    model, features = bench.model, bench.features
    e = settings["evaluate"]
    small = model.num_pairs <= DENSE_LP_LIMIT
    policies = {}
    sampling = bench.sampling(settings["sgd"]["sampler"])
    theta, _ = run_sgd(sgd_config(settings, preset, args.seed, sampling, features.dim), features, sampling)
    policies["SGD"] = policy_from_theta(features.mu0, features, theta)
    cs = settings["cs"]
    k1 = cs["k1"]
    cfg = CsConfig(
        k1=k1, k2=max(1, math.ceil(k1 / NUM_ACTIONS)), v1=cs["v1"], M=cs["M"],
        eps_s=cs["eps_s"], seed=args.seed,
    )
    theta_cs, _ = run_constraint_sampling(model, features, bench.sampling(cs["sampler"]), cfg)
    if theta_cs is not None:
        policies["CS"] = policy_from_theta(features.mu0, features, theta_cs)
    policies.update(bench.heuristics)
    if small:
        policies["OPTIMAL"] = solve_dual_lp_exact(model).policy
    total_cap = float(settings.queue.caps.sum())
    rows = []
    for i, (name, policy) in enumerate(policies.items()):
        exact = float(stationary_distribution(model, policy) @ model.loss) if small else math.nan
        losses = simulate_losses(model, policy, e["sim_horizon"], args.seed + i)[e["burn_in"]:]
        mean = float(losses.mean())
        rows.append([name, exact, mean, batch_means_stderr(losses), mean * total_cap])
    body = csv_text(EVAL_HEADER, rows)
    write_output(os.path.join(args.out, "evaluation.csv"), args, settings, preset, body)
    for row in rows:
        print(f"{row[0]:8s} exact={row[1]:.6f} simulated={row[2]:.6f}")


def cmd_oracle(args, settings, preset):
    model = build_queue_mdp(settings.queue)
    total_cap = float(settings.queue.caps.sum())
    rows = []
    if model.num_pairs <= DENSE_LP_LIMIT:
        lam = solve_dual_lp_exact(model).lambda_star
        rows.append(["dual-lp", lam, lam * total_cap])
    lam = relative_value_iteration(model).lambda_star
    rows.append(["rvi", lam, lam * total_cap])
    body = csv_text(("method", "lambda_star", "avg_queue_length"), rows)
    write_output(os.path.join(args.out, "oracle.csv"), args, settings, preset, body)
    print(f"lambda_star={rows[0][1]!r}")


def cmd_export_model(args, settings, preset):
    model = build_queue_mdp(settings.queue, FULL_SCALE_MAX_PAIRS) if args.full_scale else build_queue_mdp(settings.queue)
    path = write_output(os.path.join(args.out, "model.txt"), args, settings, preset, model.to_text())
    print(f"wrote {path}: X={model.num_states} A={model.num_actions}")


COMMANDS = {
    "run-sgd": cmd_run_sgd,
    "run-cs": cmd_run_cs,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
    "export-model": cmd_export_model,
}


def build_parser():
    p = argparse.ArgumentParser(prog="dualalp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=0, help="root seed (non-negative)")
    p.add_argument("--preset", help="halving|theorem1 for SGD; reduced-ladder|paper-ladder for run-cs")
    p.add_argument("--trials", type=int, help="constraint-sampling trials per sample size")
    p.add_argument("--full-scale", action="store_true", help="paper-size buffers (opt-in long run)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for run-cs trials")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.seed < 0:
            raise InputError("--seed must be non-negative")
        if args.trials is not None and args.trials < 1:
            raise InputError("--trials must be >= 1")
        if args.workers < 1:
            raise InputError("--workers must be >= 1")
        allowed = PRESETS.get(args.command, ())
        preset = args.preset or (allowed[0] if allowed else "none")
        if args.preset is not None and args.preset not in allowed:
            raise InputError(f"preset {args.preset!r} is not valid for {args.command}")
        settings = load_settings(args.config, args.full_scale)
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args, settings, preset)
    except Exception as exc:  # machine-readable failure record
        record = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
