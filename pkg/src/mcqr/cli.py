"""Batch command-line front end: simulate, fit, summarize, diagnose.

Every command writes its artifacts under ``--out`` together with a
``manifest.json`` recording the resolved settings, the seed, the output
paths and the sampler counters, so a run can be audited and replayed.
Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numerical
failure.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from numpy.random import SeedSequence

from . import __version__
from .data_io import (
    ParsedConfig,
    SyntheticSpec,
    dataset_to_long,
    generate_synthetic,
    parse_config,
    parse_config_dict,
    read_draws,
    read_long_csv,
    resolved_config_dict,
    synthetic_design,
    write_draws,
    write_long_csv,
)
from .diagnostics import PosteriorDraws, rhat_table, summarize
from .errors import ConfigError, IngestionError, McqrError, NumericalError
from .gibbs import run_chains
from .model import QuantileSpec

log = logging.getLogger(__name__)


def _utc_now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _config_hash(mapping):
    blob = json.dumps(mapping, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _write_manifest(out_dir, payload):
    path = Path(out_dir) / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_manifest(fit_dir):
    path = Path(fit_dir) / "manifest.json"
    if not path.is_file():
        raise IngestionError(f"no manifest.json under {fit_dir}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _tau_key(tau):
    return f"{tau:g}"


def _safe_name(param):
    return re.sub(r"[^\w.+-]+", "_", param).strip("_")


def _parse_tau_flag(raw):
    try:
        taus = [float(t) for t in raw.split(",") if t.strip() != ""]
    except ValueError:
        raise ConfigError(f"--tau expects comma-separated numbers, got {raw!r}") from None
    if not taus:
        raise ConfigError("--tau list is empty")
    return taus


def _load_run_settings(args):
    """Resolve config file, manifest replay, and flag overrides into one ParsedConfig."""
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"no such config file: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if isinstance(raw, dict) and "resolved_config" in raw:
            manifest = raw
            parsed = parse_config_dict(manifest["resolved_config"])
            data_path = manifest.get("data_path")
        else:
            parsed = parse_config_dict(raw)
            data_path = None
    else:
        parsed = parse_config_dict({})
        data_path = None

    prior, quantiles, sampler, design = parsed
    if args.baseline is not None:
        try:
            design = dataclasses.replace(design, baseline=args.baseline)
        except ValueError as exc:
            raise ConfigError(f"--baseline: {exc}") from None
    if getattr(args, "tau", None) is not None:
        taus = _parse_tau_flag(args.tau)
        try:
            quantiles = [QuantileSpec(tau=t, p=design.p) for t in taus]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    overrides = {}
    if args.n_draws is not None:
        overrides["n_draws"] = args.n_draws
    if args.burn_in is not None:
        overrides["burn_in"] = args.burn_in
    if args.chains is not None:
        overrides["n_chains"] = args.chains
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        sampler = dataclasses.replace(sampler, **overrides)
    return ParsedConfig(prior, quantiles, sampler, design), data_path


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    reps = args.replications
    if reps < 1:
        raise ConfigError(f"--replications must be positive, got {reps}")
    seed = args.seed if args.seed is not None else 0
    try:
        tau = float(args.tau) if args.tau is not None else 0.5
    except ValueError:
        raise ConfigError(f"--tau expects a number, got {args.tau!r}") from None
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"--tau must lie strictly in (0, 1), got {tau}")
    rep_seeds = [int(s) for s in SeedSequence(seed).generate_state(reps, dtype=np.uint64)]
    # validate everything before touching the filesystem
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    design = synthetic_design()
    width = len(str(reps))
    outputs = []
    settings = {
        "n": args.n,
        "seed": seed,
        "tau": tau,
        "noiseless": args.noiseless,
        "replications": reps,
    }
    for r, rep_seed in enumerate(rep_seeds):
        spec = SyntheticSpec(n=args.n, seed=rep_seed, noiseless=args.noiseless, tau=tau)
        dataset = generate_synthetic(spec)
        frame = dataset_to_long(dataset, design)
        name = "synthetic.csv" if reps == 1 else f"synthetic_{r + 1:0{width}d}.csv"
        write_long_csv(frame, out_dir / name)
        outputs.append(name)
        log.info("simulate: wrote %s (%d rows)", name, len(frame))

    _write_manifest(out_dir, {
        "command": "simulate",
        "created_utc": _utc_now(),
        "version": __version__,
        "settings": settings,
        "config_hash": _config_hash(settings),
        "rep_seeds": rep_seeds,
        "outputs": outputs,
    })
    print(f"wrote {len(outputs)} dataset(s) under {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def cmd_fit(args):
    parsed, manifest_data_path = _load_run_settings(args)
    prior, quantiles, sampler, design = parsed
    data_path = args.data if args.data is not None else manifest_data_path
    if data_path is None:
        raise ConfigError("fit needs a dataset path (positional) or a manifest with one")
    dataset = read_long_csv(data_path, design)
    log.info("fit: %d observations, p=%d, k=%d", dataset.n, dataset.p, dataset.k)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = resolved_config_dict(ParsedConfig(prior, quantiles, sampler, design))

    outputs, counters, violations = {}, {}, {}
    for q in quantiles:
        key = _tau_key(q.tau)
        tau_dir = out_dir / f"tau_{key}"
        tau_dir.mkdir(parents=True, exist_ok=True)
        log.info("fit: tau=%s, %d chains x %d draws", key, sampler.n_chains, sampler.n_draws)
        draws = run_chains(dataset, prior, q, sampler)
        chain_files = []
        for c, chain in enumerate(draws.chains):
            rel = f"tau_{key}/chain_{c}.csv"
            write_draws(out_dir / rel, chain, draws.names, first_iter=sampler.burn_in + 1)
            chain_files.append(rel)
        outputs[key] = chain_files
        counters[key] = [s.as_dict() for s in draws.stats]
        violations[key] = [len(v) for v in draws.invariant_violations]

    _write_manifest(out_dir, {
        "command": "fit",
        "created_utc": _utc_now(),
        "version": __version__,
        "data_path": str(Path(data_path).resolve()),
        "seed": sampler.seed,
        "tau": [q.tau for q in quantiles],
        "resolved_config": resolved,
        "config_hash": _config_hash(resolved),
        "outputs": outputs,
        "counters": counters,
        "invariant_violations": violations,
    })
    print(f"fit complete: {len(quantiles)} quantile level(s) x {sampler.n_chains} chain(s) under {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# summarize / diagnose helpers
# ---------------------------------------------------------------------------


def _draws_from_fit(fit_dir):
    """Load every (tau, chain) draw store recorded by a fit manifest."""
    manifest = _load_manifest(fit_dir)
    if manifest.get("command") != "fit":
        raise IngestionError(f"manifest under {fit_dir} is not from a fit run")
    burn_in = manifest.get("resolved_config", {}).get("sampler", {}).get("burn_in", 0)
    per_tau = {}
    for key, files in sorted(manifest["outputs"].items(), key=lambda kv: float(kv[0])):
        chains, names = [], None
        for rel in files:
            file_names, matrix, _ = read_draws(Path(fit_dir) / rel)
            if names is None:
                names = file_names
            elif file_names != names:
                raise IngestionError(f"parameter mismatch across chain files under {fit_dir}")
            chains.append(matrix)
        per_tau[key] = PosteriorDraws(chains=chains, names=names, burn_in=burn_in)
    return per_tau


def _write_table(frame, out_dir, stem):
    csv_path = Path(out_dir) / f"{stem}.csv"
    txt_path = Path(out_dir) / f"{stem}.txt"
    frame.to_csv(csv_path, float_format="%.6g")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(frame.to_string(float_format=lambda v: f"{v:10.4f}"))
        fh.write("\n")
    return csv_path, txt_path


def cmd_summarize(args):
    per_tau = _draws_from_fit(args.fit_dir)
    out_dir = Path(args.out) if args.out is not None else Path(args.fit_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blocks = []
    for key, draws in per_tau.items():
        table = summarize(draws)
        block = table[["mean", "sd"]].copy()
        if args.median:
            block["median"] = table["median"]
        block.columns = [f"{c}_tau{key}" for c in block.columns]
        blocks.append(block)
    combined = blocks[0].join(blocks[1:]) if len(blocks) > 1 else blocks[0]
    combined.index.name = "param"
    csv_path, _ = _write_table(combined, out_dir, "summary")
    print(f"wrote {csv_path}")
    return 0


def cmd_diagnose(args):
    per_tau = _draws_from_fit(args.fit_dir)
    out_dir = Path(args.out) if args.out is not None else Path(args.fit_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blocks = []
    worst = -np.inf
    for key, draws in per_tau.items():
        table = rhat_table(draws, split=args.split)
        worst = max(worst, float(table["rhat"].max()))
        table = table.rename(columns={"rhat": f"rhat_tau{key}"})
        blocks.append(table)
        trace_dir = out_dir / f"tau_{key}"
        trace_dir.mkdir(parents=True, exist_ok=True)
        for idx, name in enumerate(draws.names):
            rows = []
            for c, chain in enumerate(draws.chains):
                iters = np.arange(1, chain.shape[0] + 1)
                rows.append(np.column_stack([iters, np.full(len(iters), c), chain[:, idx]]))
            stacked = np.vstack(rows)
            trace_path = trace_dir / f"trace_{_safe_name(name)}.csv"
            with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("iter,chain,value\n")
                for it, c, v in stacked:
                    fh.write(f"{int(it)},{int(c)},{v:.17g}\n")
    combined = blocks[0].join(blocks[1:]) if len(blocks) > 1 else blocks[0]
    combined.index.name = "param"
    csv_path, _ = _write_table(combined, out_dir, "rhat")
    print(f"wrote {csv_path} (max rhat {worst:.4f})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage failures raise instead of exiting."""

    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _add_fit_flags(sub):
    sub.add_argument("--config", metavar="PATH", help="JSON config or fit manifest to replay")
    sub.add_argument("--tau", metavar="LIST", help="comma-separated quantile levels")
    sub.add_argument("--n-draws", type=int, metavar="N", help="total sweeps per chain")
    sub.add_argument("--burn-in", type=int, metavar="N", help="discarded leading sweeps")
    sub.add_argument("--chains", type=int, metavar="N", help="number of chains")
    sub.add_argument("--seed", type=int, metavar="N", help="master seed")
    sub.add_argument("--baseline", metavar="LABEL", help="override the baseline label")


def build_parser():
    parser = _Parser(prog="mcqr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mcqr {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="generate synthetic choice data")
    sim.add_argument("--n", type=int, default=1000, help="observations per dataset")
    sim.add_argument("--seed", type=int, default=None, metavar="N")
    sim.add_argument("--tau", default=None, metavar="LEVEL", help="noise quantile level")
    sim.add_argument("--noiseless", action="store_true",
                     help="deterministic utilities, no error term")
    sim.add_argument("--replications", type=int, default=1, metavar="R")
    sim.add_argument("--out", default="mcqr_out", metavar="DIR")
    sim.set_defaults(func=cmd_simulate)

    fit = subs.add_parser("fit", help="run the Gibbs sampler on a long-format CSV")
    fit.add_argument("data", nargs="?", default=None, help="long-format dataset CSV")
    _add_fit_flags(fit)
    fit.add_argument("--out", default="mcqr_out", metavar="DIR")
    fit.set_defaults(func=cmd_fit)

    summ = subs.add_parser("summarize", help="posterior summary tables from a fit directory")
    summ.add_argument("fit_dir", help="directory written by fit")
    summ.add_argument("--median", action="store_true", help="add a posterior-median column")
    summ.add_argument("--out", default=None, metavar="DIR")
    summ.set_defaults(func=cmd_summarize)

    diag = subs.add_parser("diagnose", help="convergence table and trace exports")
    diag.add_argument("fit_dir", help="directory written by fit")
    diag.add_argument("--split", action="store_true", help="split chains in half first")
    diag.add_argument("--out", default=None, metavar="DIR")
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --version / --help print and stop
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except McqrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
