"""Command-line entry point: ``fairdd <command> ...``.

Commands
  generate-data   write the configured synthetic dataset as train/test CSVs
  train           run the staged protocol (``--mode fairdd``) or the pooled baseline
  evaluate        recompute metrics.json from a run's prediction dump
  fate            trade-off scores of an enhanced run against a baseline run
  ablate          sweep one setting and tabulate + plot the outcomes
  report          print metrics of one or more runs (values x100)

Failures exit nonzero and print one JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from fairdd.config import ConfigError, ExperimentConfig, load_config, parse_config
from fairdd.data import write_dataset
from fairdd.metrics import CRITERIA, MetricsReport, PredictionDump, evaluate, fate_report
from fairdd.trainer import predict, run_incremental, run_vanilla

log = logging.getLogger("fairdd")

PREDICTIONS = "predictions.csv"
METRICS = "metrics.json"
SWEEPS = ("order", "mixup", "supcon", "alpha", "beta", "buffer")
DEFAULT_VALUES = {
    "mixup": "on,off",
    "supcon": "on,off",
    "alpha": "0.2,0.4,0.6,0.8,1.0",
    "beta": "0,0.5,1",
    "buffer": "0,100,300",
}


class CommandError(RuntimeError):
    pass


# runs ------------------------------------------------------------------------


def train_run(cfg_dict: dict, mode: str, run_dir: str) -> dict:
    """Train one model and write a self-describing run directory. Returns metrics."""
    cfg = parse_config(cfg_dict)
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.as_dict(), indent=2), encoding="utf-8")
    (out / "run.json").write_text(json.dumps({"mode": mode}), encoding="utf-8")

    dataset = cfg.dataset.load()
    with open(out / "epochs.jsonl", "w", encoding="utf-8") as sink:
        if mode == "fairdd":
            buffers = []
            net, reports = run_incremental(cfg.train, dataset, sink,
                                           stage_callback=lambda s, n, t, b: buffers.append(b))
            buffers[-1].dump_csv(out / "buffer.csv")
        elif mode == "vanilla":
            net, reports = run_vanilla(cfg.train, dataset, sink)
        else:
            raise CommandError(f"unknown mode {mode!r}; expected fairdd or vanilla")

    net.save(out / "params.json")
    stages = [{k: v for k, v in vars(r).items() if k != "epochs"} for r in reports]
    (out / "stages.json").write_text(json.dumps(stages, indent=2, default=str), encoding="utf-8")
    dump = predict(net, dataset.test())
    dump.write_csv(out / PREDICTIONS)
    # metrics come from the dump on disk so `evaluate` reproduces them exactly
    report = evaluate(PredictionDump.read_csv(out / PREDICTIONS))
    report.to_json(out / METRICS)
    return report.as_dict()


def _read_dump(run_dir: Path, role: str) -> PredictionDump:
    path = Path(run_dir) / PREDICTIONS
    if not path.exists():
        raise CommandError(f"missing {role} prediction dump: {path}")
    return PredictionDump.read_csv(path)


# sweeps ----------------------------------------------------------------------


def _parse_order(token: str) -> list[int]:
    try:
        return [int(t) for t in token.replace("-", " ").split()]
    except ValueError as exc:
        raise CommandError(f"bad stage order {token!r}; use e.g. 1-0") from exc


def _on_off(token: str) -> bool:
    if token.lower() in ("on", "true", "1", "yes"):
        return True
    if token.lower() in ("off", "false", "0", "no"):
        return False
    raise CommandError(f"expected on/off, got {token!r}")


def sweep_variants(cfg: ExperimentConfig, sweep: str, values: str | None) -> list[tuple[str, ExperimentConfig]]:
    if sweep not in SWEEPS:
        raise CommandError(f"unknown sweep {sweep!r}; choose from {', '.join(SWEEPS)}")
    if values is None:
        if sweep == "order":
            values = ",".join("-".join(map(str, p)) for p in itertools.permutations(sorted(cfg.train.stage_order)))
        else:
            values = DEFAULT_VALUES[sweep]
    tokens = [t.strip() for t in values.split(",") if t.strip()]
    if not tokens:
        raise CommandError("--values is empty")
    variants = []
    for tok in tokens:
        try:
            if sweep == "order":
                new = cfg.replace_train(stage_order=_parse_order(tok))
            elif sweep == "mixup":
                new = cfg.replace_train(mixup={"enabled": _on_off(tok)})
            elif sweep == "supcon":
                new = cfg.replace_train(use_supcon=_on_off(tok))
            elif sweep in ("alpha", "beta"):
                new = cfg.replace_train(weights={sweep: float(tok)})
            else:
                new = cfg.replace_train(buffer_capacity=int(tok))
        except ValueError as exc:
            raise CommandError(f"bad value {tok!r} for sweep {sweep}: {exc}") from exc
        variants.append((tok, new))
    return variants


def _plot(rows: list[dict], x_key: str, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [str(r[x_key]) for r in rows]
    pos = np.arange(len(rows))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.bar(pos, [100 * r["accuracy"] for r in rows], color="tab:blue")
    ax1.set_xticks(pos, labels)
    ax1.set_ylabel("accuracy (%)")
    width = 0.8 / len(CRITERIA)
    for i, fc in enumerate(CRITERIA):
        ax2.bar(pos + (i - 1) * width, [100 * r[fc] for r in rows], width, label=fc)
    ax2.set_xticks(pos, labels)
    ax2.set_ylabel("gap (x1e-2)")
    ax2.legend()
    for ax in (ax1, ax2):
        ax.set_xlabel(x_key)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _write_table(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# commands --------------------------------------------------------------------


def cmd_generate_data(args) -> dict:
    cfg = load_config(args.config)
    if cfg.dataset.train_csv is not None:
        raise CommandError("generate-data needs a synthetic dataset config, not train_csv")
    out = Path(args.out) if args.out else cfg.run_root() / "data"
    train_p, test_p = write_dataset(cfg.dataset.load(), out)
    (out / "dataset.json").write_text(json.dumps(cfg.dataset.as_dict(), indent=2), encoding="utf-8")
    return {"train": str(train_p), "test": str(test_p)}


def cmd_train(args) -> dict:
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir) if args.run_dir else cfg.run_root() / args.mode
    metrics = train_run(cfg.as_dict(), args.mode, str(run_dir))
    return {"run_dir": str(run_dir), "metrics": metrics}


def cmd_evaluate(args) -> dict:
    run_dir = Path(args.run_dir)
    report = evaluate(_read_dump(run_dir, "run"))
    out = Path(args.out) if args.out else run_dir / METRICS
    report.to_json(out)
    return {"metrics": str(out), **report.as_dict()}


def cmd_fate(args) -> dict:
    enhanced = evaluate(_read_dump(Path(args.enhanced), "enhanced"))
    baseline = evaluate(_read_dump(Path(args.baseline), "baseline"))
    rep = fate_report(enhanced, baseline, args.lam)
    out = Path(args.out) if args.out else Path(args.enhanced)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_json(out / "fate.json")
    rows = [{"criterion": fc, "fate": e.fate, "fate_x1e-2": 100 * e.fate, "acc_e": e.acc_e, "acc_b": e.acc_b,
             "fc_e": e.fc_e, "fc_b": e.fc_b, "lambda": e.lam} for fc, e in rep.entries.items()]
    _write_table(rows, out / "fate.csv")
    _plot([{"run": "baseline", **baseline.as_dict()}, {"run": "enhanced", **enhanced.as_dict()}],
          "run", out / "fate.png", "enhanced vs baseline")
    return {"fate": str(out / "fate.json"), **rep.scaled()}


def cmd_ablate(args) -> dict:
    cfg = load_config(args.config)
    root = Path(args.out) if args.out else cfg.run_root() / f"ablate-{args.sweep}"
    variants = sweep_variants(cfg, args.sweep, args.values)
    baseline_dir = Path(args.baseline) if args.baseline else root / "baseline"
    jobs = []
    if not args.baseline:
        jobs.append((cfg.as_dict(), "vanilla", str(baseline_dir)))
    run_dirs = [root / f"{args.sweep}={tok}" for tok, _ in variants]
    jobs += [(v.as_dict(), "fairdd", str(d)) for (_, v), d in zip(variants, run_dirs)]

    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            list(pool.map(train_run, *zip(*jobs)))
    else:
        for job in jobs:
            train_run(*job)

    baseline = evaluate(_read_dump(baseline_dir, "baseline"))
    rows = []
    for (tok, _), d in zip(variants, run_dirs):
        m = evaluate(_read_dump(d, "sweep"))
        fr = fate_report(m, baseline, cfg.fate_lambda)
        rows.append({"sweep": args.sweep, "value": tok, "run_dir": str(d),
                     **{k: v for k, v in m.as_dict().items() if k != "skipped_classes"},
                     **{f"FATE_{fc}": e.fate for fc, e in fr.entries.items()}})
    _write_table(rows, root / "ablation.csv")
    _plot(rows, "value", root / "ablation.png", f"{args.sweep} sweep")
    return {"table": str(root / "ablation.csv"), "plot": str(root / "ablation.png"), "runs": len(rows)}


def cmd_report(args) -> dict:
    rows = []
    for d in args.run_dirs:
        path = Path(d) / METRICS
        if not path.exists():
            raise CommandError(f"missing metrics file: {path}")
        rows.append({"run": str(d), **MetricsReport.from_json(path).scaled()})
    cols = ["accuracy", "precision", "recall", "f1", *CRITERIA]
    width = max(len(r["run"]) for r in rows)
    print("metrics x1e-2".ljust(width) + "".join(f"{c:>10}" for c in cols))
    for r in rows:
        print(r["run"].ljust(width) + "".join(f"{r[c]:>10.2f}" for c in cols))
    if args.csv:
        _write_table(rows, Path(args.csv))
    return {"runs": len(rows)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairdd", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write the synthetic dataset as CSV")
    g.add_argument("--config")
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config")
    t.add_argument("--mode", choices=["fairdd", "vanilla"], default="fairdd")
    t.add_argument("--run-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="recompute metrics from a prediction dump")
    e.add_argument("run_dir")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("fate", help="trade-off scores against a baseline run")
    f.add_argument("--enhanced", required=True)
    f.add_argument("--baseline", required=True)
    f.add_argument("--lambda", dest="lam", type=float, default=1.0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fate)

    a = sub.add_parser("ablate", help="sweep one setting")
    a.add_argument("--config")
    a.add_argument("--sweep", required=True, choices=SWEEPS)
    a.add_argument("--values", help="comma-separated; orders as 1-0,0-1")
    a.add_argument("--baseline", help="existing vanilla run directory to reuse")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="print run metrics")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        code = 2 if isinstance(exc, ConfigError) else 1
        record = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        if args.verbose:
            log.exception("command failed")
        return code
    if args.command != "report":
        print(json.dumps({"status": "ok", "command": args.command, **result}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
