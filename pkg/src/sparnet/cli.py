"""Command-line front end: ``pretrain``, ``importance``, ``adapt``, ``report``.

Every command takes ``--config FILE`` (JSON) plus dotted overrides such as
``--engine.lambda 1.8`` or ``--run.seeds [0,1,2]``. Exit codes: 0 success,
1 bad config or input, 2 source training failed, 3 missing or corrupt
artifact, 4 numerical abort.
"""

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import dumps, engine_config, load_config, parse_value
from .engine import CSV_HEADER, run_stream
from .exceptions import ConfigError, MissingArtifactError, SparnetError
from .importance import ImportanceVector, compute_importance
from .model import Architecture, error_rate_of, pretrain_source, read_checkpoint, save_checkpoint
from .streambench import build_stream, make_source_task

log = logging.getLogger("sparnet")

CHECKPOINT_NAME = "source.json"


def version_string():
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        described = ""
    return f"{__version__}+g{described}" if described else __version__


# -- shared helpers ---------------------------------------------------------


def _build_task(cfg):
    task = dict(cfg["task"])
    seed = task.pop("seed")
    try:
        return make_source_task(seed=seed, **task)
    except ValueError as exc:
        raise ConfigError(f"task: {exc}") from None


def _arch(cfg):
    t = cfg["task"]
    return Architecture(t["d"], tuple(cfg["model"]["hidden"]), t["n_classes"])


def _read_checkpoint(path, cfg):
    if not Path(path).is_file():
        raise MissingArtifactError(f"checkpoint {path} not found; run `pretrain` first")
    return read_checkpoint(path, _arch(cfg))


def _write_run_files(out_dir, cfg, command, extra=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(dumps(cfg), encoding="utf-8")
    manifest = {"command": command, "version": version_string(), "seeds": cfg["run"]["seeds"], **(extra or {})}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _rng_note(cfg):
    return f"task.seed={cfg['task']['seed']}; model rng SeedSequence([task.seed, 3])"


# -- commands ---------------------------------------------------------------


def cmd_pretrain(cfg, out_dir, checkpoint=None):
    task = _build_task(cfg)
    model = {k: v for k, v in cfg["model"].items() if k != "hidden"}
    params = pretrain_source(
        task.x_train, task.y_train, _arch(cfg), task.x_holdout, task.y_holdout,
        rng=np.random.default_rng(np.random.SeedSequence([cfg["task"]["seed"], 3])), **model,
    )
    err = error_rate_of(params, task.x_holdout, task.y_holdout)
    path = Path(checkpoint) if checkpoint else out_dir / CHECKPOINT_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, path, rng_note=_rng_note(cfg))
    _write_run_files(out_dir, cfg, "pretrain", {"checkpoint": str(path), "holdout_error": err})
    print(f"holdout error {err:.4f}")
    print(f"checkpoint written to {path}")
    return path


def cmd_importance(cfg, checkpoint):
    params, _, note = _read_checkpoint(checkpoint, cfg)
    task = _build_task(cfg)
    omega = compute_importance(params, task.x_train[: cfg["importance"]["n_samples"]])
    save_checkpoint(params, checkpoint, importance=omega, rng_note=note)
    print(f"importance over {omega.sample_count} samples, {len(omega)} parameters, "
          f"mean {float(np.mean(omega.values)):.6g}")
    return omega


def _summary_rows(tables, seeds):
    domains = tables[0].domains()
    rows = []
    for seed, table in zip(seeds, tables):
        per = table.per_domain_error()
        rows.append([str(seed), table.method] + [per[d] for d in domains] + [table.mean_error(), table.final_probe])
    errs = np.array([[r[2 + i] for i in range(len(domains) + 1)] for r in rows])
    method = tables[0].method
    rows.append(["mean", method] + list(errs.mean(axis=0)) + [None])
    rows.append(["std", method] + list(errs.std(axis=0)) + [None])
    return ["seed", "method"] + domains + ["mean", "final_probe"], rows


def _cell(v):
    if v is None:
        return ""
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def _print_table(header, rows):
    text = [[str(h) for h in header]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in text) for i in range(len(header))]
    for r in text:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))


def cmd_adapt(cfg, checkpoint, out_dir):
    params0, importance_doc, _ = _read_checkpoint(checkpoint, cfg)
    importance = ImportanceVector.from_dict(importance_doc) if importance_doc is not None else None
    task = _build_task(cfg)
    seeds = cfg["run"]["seeds"]
    stream_cfg = cfg["stream"]
    _write_run_files(out_dir, cfg, "adapt", {"checkpoint": str(checkpoint)})
    tables = []
    for seed in seeds:
        ecfg = engine_config(cfg, seed)
        try:
            stream = build_stream(
                task, stream_cfg["kinds"], stream_cfg["severity"], stream_cfg["batches_per_domain"],
                ecfg.batch_size, seed,
            )
        except ValueError as exc:
            raise ConfigError(f"stream: {exc}") from None
        table = run_stream(ecfg, stream, params0, importance, (task.x_holdout, task.y_holdout))
        (out_dir / f"metrics_seed{seed}.csv").write_text(table.to_csv(), encoding="utf-8")
        tables.append(table)
        log.info("seed %d: mean error %.4f", seed, table.mean_error())

    header, rows = _summary_rows(tables, seeds)
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[_cell(v) if not isinstance(v, float) else repr(float(v)) for v in row] for row in rows])
    with open(out_dir / "probe.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "step", "probe_src_err"])
        for seed, table in zip(seeds, tables):
            writer.writerows([seed, step, repr(float(err))] for step, err in table.probe_series())
    _print_table(header, rows)
    return tables


# -- report -----------------------------------------------------------------


def read_metrics(path):
    """Rows of a metrics CSV; raises :class:`ConfigError` on a foreign header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise MissingArtifactError(f"cannot read {path}: {exc.strerror}") from None
    if header is None or tuple(header) != CSV_HEADER:
        raise ConfigError(f"{path}: header mismatch, expected {','.join(CSV_HEADER)}")
    return [dict(zip(CSV_HEADER, row)) for row in rows]


def _domain_errors(rows):
    per = {}
    for row in rows:
        per.setdefault(row["domain"], []).append(float(row["batch_err"]))
    return {d: float(np.mean(v)) for d, v in per.items()}


def _sweep_value(path, key):
    """Engine setting from the config echo next to a metrics CSV, if any."""
    echo = Path(path).parent / "config.json"
    if not echo.is_file():
        return None
    try:
        return json.loads(echo.read_text(encoding="utf-8"))["engine"][key]
    except (KeyError, json.JSONDecodeError):
        return None


def cmd_report(paths, out=None):
    if not paths:
        raise ConfigError("report needs at least one metrics CSV")
    runs = []
    for path in paths:
        rows = read_metrics(path)
        method = rows[0]["method"] if rows else "?"
        label = f"{Path(path).parent.name}/{Path(path).stem}" if Path(path).parent.name else Path(path).stem
        runs.append((label, method, _domain_errors(rows), path))
    domains = list(dict.fromkeys(d for _, _, per, _ in runs for d in per))
    header = ["run", "method"] + domains + ["mean"]
    table = []
    for label, method, per, _ in runs:
        values = [per.get(d) for d in domains]
        present = [v for v in values if v is not None]
        table.append([label, method] + values + [float(np.mean(present)) if present else None])
    # best (lowest) entry per numeric column gets a star
    best = {}
    for j in range(2, len(header)):
        col = [row[j] for row in table if row[j] is not None]
        best[j] = min(col) if col and len(table) > 1 else None
    shown = [
        [row[0], row[1]] + [
            None if v is None else f"{v:.4f}" + ("*" if best[j] is not None and v == best[j] else "")
            for j, v in enumerate(row[2:], start=2)
        ]
        for row in table
    ]
    _print_table(header, shown)

    sweeps = {}
    for key in ("lambda", "beta"):
        values = [_sweep_value(path, key) for *_, path in runs]
        if None in values or len(set(values)) < 2:
            continue
        grouped = {}
        for v, row in zip(values, table):
            grouped.setdefault(v, []).append(row[-1])
        sweeps[key] = {v: float(np.mean(e)) for v, e in sorted(grouped.items())}
        print(f"\n{key} sweep")
        _print_table([key, "mean_error"], [[repr(v), e] for v, e in sweeps[key].items()])
        errs = list(sweeps[key].values())
        print(f"band {max(errs) - min(errs):.4f}")

    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header + ["best_columns"])
            for row in table:
                marks = [header[j] for j in range(2, len(header)) if best[j] is not None and row[j] == best[j]]
                writer.writerow([_cell(v) if not isinstance(v, float) else repr(float(v)) for v in row] + [";".join(marks)])
            for key, values in sweeps.items():
                for v, e in values.items():
                    writer.writerow([f"sweep:{key}={v!r}", ""] + [""] * len(domains) + [repr(float(e)), ""])
    return table, sweeps


# -- entry point ------------------------------------------------------------


def _split_overrides(extra):
    """``--a.b VALUE`` / ``--a.b=VALUE`` pairs from leftover argv."""
    pairs = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognised argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{key}: missing value")
            i += 1
            raw = extra[i]
        pairs.append((key, parse_value(raw)))
        i += 1
    return pairs


def _parse_sweep(spec):
    if "=" not in spec:
        raise ConfigError(f"--sweep expects KEY=V1,V2,..., got {spec!r}")
    key, raw = spec.split("=", 1)
    return key, [parse_value(v) for v in raw.split(",") if v]


def build_parser():
    parser = argparse.ArgumentParser(prog="sparnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {version_string()}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the source model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.add_argument("--checkpoint", help="checkpoint path (default OUT_DIR/source.json)")

    p = sub.add_parser("importance", help="add the parameter importance vector to a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("adapt", help="run adaptation streams and write metrics")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--sweep", help="KEY=V1,V2,... runs one sub-directory per value")

    p = sub.add_parser("report", help="compare metrics CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="also write the comparison as CSV")
    return parser


def _threads():
    raw = os.environ.get("SPARNET_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SPARNET_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"SPARNET_THREADS must be a positive integer, got {raw!r}")
    return n


def _dispatch(args, overrides):
    if args.command == "report":
        if overrides:
            raise ConfigError("report takes no config overrides")
        cmd_report(args.csv, args.out)
        return
    cfg = load_config(args.config, overrides)
    if args.command == "pretrain":
        out_dir = Path(args.out_dir or cfg["run"]["out_dir"])
        cmd_pretrain(cfg, out_dir, args.checkpoint)
    elif args.command == "importance":
        cmd_importance(cfg, args.checkpoint)
    elif args.command == "adapt":
        out_dir = Path(args.out_dir or cfg["run"]["out_dir"])
        if args.sweep:
            key, values = _parse_sweep(args.sweep)
            for value in values:
                swept = load_config(args.config, overrides + [(key, value)])
                print(f"== {key}={value!r}")
                cmd_adapt(swept, args.checkpoint, out_dir / f"{key}={value}")
        else:
            cmd_adapt(cfg, args.checkpoint, out_dir)


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = _split_overrides(extra)
        threads = _threads()
        with threadpool_limits(limits=threads):
            _dispatch(args, overrides)
    except SparnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def entry():
    sys.exit(main())
