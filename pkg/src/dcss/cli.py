"""Command-line entry point: ``dcss {generate,run,baseline,score}``.

Exit codes: 0 success, 2 usage/validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .data import DataFormatError, SyntheticSpec, generate_synthetic, load_csv, minmax_normalize, write_csv
from .kmeans import kmeans
from .nn import load_checkpoint, save_checkpoint
from .pipeline import (
    ConfigError,
    NumericalDivergence,
    TrainConfig,
    embed,
    mean_sd,
    run_dcss,
)

log = logging.getLogger("dcss")

REPORT_SCHEMA = 1
OUTPUT_ROOT_ENV = "DCSS_OUTPUT_ROOT"

# config-file sections: keys are either TrainConfig fields or per-stage aliases
SECTION_ALIASES = {
    "pretrain": {"epochs": "pretrain_epochs", "lr": "lr_pretrain", "weight_decay": "weight_decay_pretrain"},
    "train": {"epochs": "train_epochs", "lr": "lr_train"},
    "model": {},
    "run": {},
}


class UsageError(Exception):
    pass


def _out_dir(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"cannot write to {p}: {exc}") from None
    return p


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(TrainConfig)}
    if name not in types:
        raise UsageError(f"unknown config key {name!r}")
    kind = types[name]
    try:
        if name == "hidden":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "bool":
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if kind == "int":
            return int(raw)
        return float(raw)
    except ValueError:
        raise UsageError(f"bad value for {name}: {raw!r}") from None


def read_config(path) -> tuple[dict, list[int] | None]:
    """Parse an INI config into TrainConfig overrides and an optional seed list."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out, seeds = {}, None
    for section in cp.sections():
        if section not in SECTION_ALIASES:
            raise UsageError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if section == "run" and key == "seeds":
                seeds = _parse_seeds(raw)
                continue
            name = SECTION_ALIASES[section].get(key, key)
            out[name] = _coerce(name, raw)
    return out, seeds


def _parse_seeds(raw: str) -> list[int]:
    try:
        if ".." in raw:
            lo, hi = raw.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in raw.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"bad seed list {raw!r}") from None


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    spec = SyntheticSpec(n_per_cluster=args.n_per_cluster, k=args.k, seed=args.seed,
                         center_spread=args.center_spread, min_separation=args.min_separation)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out_dir)
    ds = generate_synthetic(spec)
    write_csv(out / "features.csv", ds.features)
    write_csv(out / "labels.csv", ds.labels)
    write_csv(out / "latent.csv", ds.latent)
    (out / "dcss.ini").write_text(
        f"# suggested settings for this dataset\n[model]\nk = {spec.k}\nm = 2\n")
    _dump_json(out / "manifest.json", {
        "tool_version": __version__,
        "command": "generate",
        "synthetic_spec": spec.__dict__,
        "files": {name: _sha256(out / name) for name in ("features.csv", "labels.csv", "latent.csv")},
    })
    if args.emit_plots:
        _scatter(out / "latent.png", ds.latent, ds.labels, "latent clusters")
    print(json.dumps({"n": ds.n, "d": ds.d, "k": spec.k, "out_dir": str(out)}))
    return 0


# ---------------------------------------------------------------------------
# run


def _load_dataset(args):
    path = Path(args.data)
    if not path.is_file():
        raise UsageError(f"dataset {path} not found")
    try:
        ds = load_csv(path, label_column=args.label_column)
        if args.labels:
            if not Path(args.labels).is_file():
                raise UsageError(f"labels file {args.labels} not found")
            lab = load_csv(args.labels, header=False).features
            if lab.shape != (ds.n, 1):
                raise UsageError(f"labels file has shape {lab.shape}, expected ({ds.n}, 1)")
            _, ds.labels = np.unique(lab[:, 0], return_inverse=True)
    except DataFormatError as exc:
        raise UsageError(str(exc)) from None
    if not args.no_normalize:
        ds = minmax_normalize(ds)
    return ds


def _effective_config(args) -> tuple[TrainConfig, list[int]]:
    values, seeds = {}, None
    if args.config:
        values, seeds = read_config(args.config)
    for name in ("k", "m", "lambda1", "lambda2", "pretrain_epochs", "train_epochs", "lr_pretrain",
                 "lr_train", "batch_size", "temperature", "sigma_init", "rbf_restarts", "eval_every"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if args.hidden:
        values["hidden"] = _coerce("hidden", args.hidden)
    if args.freeze_sigma:
        values["freeze_sigma"] = True
    if args.seeds:
        seeds = _parse_seeds(args.seeds)
    seeds = seeds or [0]
    try:
        cfg = TrainConfig.from_dict(values).validate()
    except (ConfigError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return cfg, sorted(set(seeds))


def _one_seed(features, labels, cfg_dict, seed, seed_dir):
    cfg = TrainConfig.from_dict({**cfg_dict, "seed": seed})
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    try:
        res = run_dcss(features, cfg, labels)
    except NumericalDivergence as exc:
        path = seed_dir / "trace_failed.jsonl"
        if exc.trace is not None:
            _write_trace(path, exc.trace)
        return {"seed": seed, "error": str(exc), "trace": str(path)}
    _write_trace(seed_dir / "trace_pretrain.jsonl", res.pretrain_trace)
    _write_trace(seed_dir / "trace_train.jsonl", res.train_trace)
    save_checkpoint(seed_dir / "checkpoint.npz", res.params, rng={"seed": seed},
                    extra={"config": cfg.to_dict(), "stage": "train"})
    save_checkpoint(seed_dir / "pretrained.npz", res.pretrained, rng={"seed": seed},
                    extra={"config": cfg.to_dict(), "stage": "pretrain"})
    sol = res.solution
    write_csv(seed_dir / "solution.csv",
              np.column_stack([sol.labels, sol.probs]),
              header=["label", *[f"p{j}" for j in range(sol.probs.shape[1])]])
    write_csv(seed_dir / "embeddings.csv", sol.embeddings)
    write_csv(seed_dir / "ae_kmeans_labels.csv", res.baseline.labels)
    m = {k: v for k, v in res.metrics.items()}
    m["seed"] = seed
    _dump_json(seed_dir / "metrics.json", m)
    return m


def _write_trace(path: Path, trace) -> None:
    with open(path, "w") as fh:
        for rec in trace.to_lines():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def aggregate(per_seed: list[dict], cfg: TrainConfig) -> dict:
    per_seed = sorted(per_seed, key=lambda r: r["seed"])
    report = {
        "schema_version": REPORT_SCHEMA,
        "mode": "reconstruction-only" if cfg.lambda1 == 0 and cfg.lambda2 == 0 else "dcss",
        "n_seeds": len(per_seed),
        "seeds": [r["seed"] for r in per_seed],
    }
    for key, name in (("nmi", "nmi"), ("ari", "ari"), ("sf", "sf_final"),
                      ("ae_kmeans_nmi", "ae_kmeans_nmi"), ("ae_kmeans_ari", "ae_kmeans_ari")):
        vals = [r[key] for r in per_seed if r.get(key) is not None]
        if len(vals) == len(per_seed) and vals:
            mu, sd = mean_sd(vals)
            report[f"{name}_mean" if name != "sf_final" else name] = mu
            report[f"{name}_sd"] = sd
    report["per_seed"] = per_seed
    return report


def cmd_run(args) -> int:
    cfg, seeds = _effective_config(args)
    ds = _load_dataset(args)
    if cfg.k >= ds.n:
        raise UsageError(f"k={cfg.k} must be smaller than the number of points ({ds.n})")
    out = _out_dir(args.out_dir)
    cfg_dict = cfg.to_dict()
    cfg_dict.pop("seed")
    jobs = [(ds.features, ds.labels, cfg_dict, s, str(out / f"seed_{s}")) for s in seeds]
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_one_seed, *zip(*jobs)))
    else:
        results = [_one_seed(*j) for j in jobs]

    manifest = {
        "tool_version": __version__,
        "command": "run",
        "config": cfg_dict,
        "seeds": seeds,
        "normalized": not args.no_normalize,
        "dataset": {"path": str(args.data), "sha256": _sha256(args.data), "n": ds.n, "d": ds.d,
                    "content_sha256": ds.fingerprint()},
        "labels": None if not args.labels else {"path": str(args.labels), "sha256": _sha256(args.labels)},
        "artifacts": {"report": "report.json", "per_seed": [f"seed_{s}" for s in seeds]},
    }
    _dump_json(out / "manifest.json", manifest)

    failed = [r for r in results if "error" in r]
    if failed:
        for r in failed:
            print(f"seed {r['seed']}: {r['error']} (trace: {r['trace']})", file=sys.stderr)
        return 3
    report = aggregate(results, cfg)
    _dump_json(out / "report.json", report)
    if args.emit_plots:
        for s in seeds:
            emb = load_csv(out / f"seed_{s}" / "embeddings.csv", header=False).features
            _scatter(out / f"seed_{s}" / "embeddings.png", emb, ds.labels, f"seed {s}")
    print(json.dumps({k: v for k, v in report.items() if k != "per_seed"}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# baseline


def cmd_baseline(args) -> int:
    if args.embedded and not (args.checkpoint and Path(args.checkpoint).is_file()):
        raise UsageError("--embedded needs an existing --checkpoint")
    ds = _load_dataset(args)
    if ds.labels is None:
        raise UsageError("baseline scoring needs ground-truth labels (--labels or --label-column)")
    k = args.k or ds.n_labels
    if k < 1 or k > ds.n:
        raise UsageError(f"invalid k={k}")
    report = {"schema_version": REPORT_SCHEMA, "k": k, "restarts": args.restarts, "seed": args.seed}
    raw = kmeans(ds.features, k, restarts=args.restarts, seed=args.seed)
    report["kmeans_nmi"] = metrics.nmi(ds.labels, raw.labels)
    report["kmeans_ari"] = metrics.ari(ds.labels, raw.labels)
    report["kmeans_sse"] = raw.sse
    if args.embedded:
        params, _, _ = load_checkpoint(args.checkpoint)
        if params.input_dim != ds.d:
            raise UsageError(f"checkpoint expects d={params.input_dim}, data has d={ds.d}")
        emb = kmeans(embed(params, ds.features), k, restarts=args.restarts, seed=args.seed)
        report["ae_kmeans_nmi"] = metrics.nmi(ds.labels, emb.labels)
        report["ae_kmeans_ari"] = metrics.ari(ds.labels, emb.labels)
    if args.out:
        _dump_json(Path(args.out), report)
    print(json.dumps(report, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# score


def cmd_score(args) -> int:
    if bool(args.labels) == bool(args.probs):
        raise UsageError("give exactly one of --labels or --probs")
    try:
        pts = load_csv(args.points).features
        other = load_csv(args.labels or args.probs).features
    except (OSError, DataFormatError) as exc:
        raise UsageError(str(exc)) from None
    if len(other) != len(pts):
        raise UsageError(f"row mismatch: {len(pts)} points vs {len(other)} assignment rows")
    try:
        if args.labels:
            if other.shape[1] != 1:
                raise UsageError("labels file must have a single column")
            _, labels = np.unique(other[:, 0], return_inverse=True)
            rep = metrics.hard_silhouette(metrics.pairwise_euclidean(pts), labels)
            name = "silhouette"
        else:
            rep = metrics.soft_silhouette(metrics.pairwise_euclidean(pts), other)
            name = "soft_silhouette"
    except (metrics.InvalidPartitionError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        write_csv(args.out, rep.per_point, header=[name])
    print(json.dumps({name: rep.total, "n": len(pts), "degenerate": rep.degenerate,
                      "empty_clusters": rep.empty_clusters}, sort_keys=True))
    return 0


def _scatter(path, points, labels, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pts = np.asarray(points)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(pts[:, 0], pts[:, 1] if pts.shape[1] > 1 else np.zeros(len(pts)),
               c=labels, s=2, cmap="tab10")
    ax.set_title(title)
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcss", description="Soft silhouette deep clustering.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write the synthetic benchmark")
    g.add_argument("--n-per-cluster", type=int, default=2500)
    g.add_argument("--k", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--center-spread", type=float, default=SyntheticSpec.center_spread)
    g.add_argument("--min-separation", type=float, default=SyntheticSpec.min_separation)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--emit-plots", action="store_true")
    g.set_defaults(func=cmd_generate)

    def data_args(sp):
        sp.add_argument("--data", required=True, help="features CSV")
        sp.add_argument("--labels", help="separate single-column labels CSV")
        sp.add_argument("--label-column", help="label column (index or header name) inside --data")
        sp.add_argument("--no-normalize", action="store_true", help="skip min-max scaling")

    r = sub.add_parser("run", help="full DCSS pipeline over one or more seeds")
    data_args(r)
    r.add_argument("--config", help="INI file with [model]/[pretrain]/[train]/[run] sections")
    r.add_argument("--seeds", help="e.g. '0,1,2' or '0..4'")
    r.add_argument("--out-dir", required=True)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--emit-plots", action="store_true")
    for name, typ in (("k", int), ("m", int), ("lambda1", float), ("lambda2", float),
                      ("pretrain-epochs", int), ("train-epochs", int), ("lr-pretrain", float),
                      ("lr-train", float), ("batch-size", int), ("temperature", float),
                      ("sigma-init", float), ("rbf-restarts", int), ("eval-every", int)):
        r.add_argument(f"--{name}", type=typ, default=None)
    r.add_argument("--hidden", help="comma-separated encoder widths, e.g. 500,500,2000")
    r.add_argument("--freeze-sigma", action="store_true")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("baseline", help="k-means on raw features and optionally on AE embeddings")
    data_args(b)
    b.add_argument("--k", type=int, default=None, help="defaults to the number of label values")
    b.add_argument("--restarts", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--embedded", action="store_true")
    b.add_argument("--checkpoint")
    b.add_argument("--out")
    b.set_defaults(func=cmd_baseline)

    s = sub.add_parser("score", help="silhouette or soft silhouette of a given assignment")
    s.add_argument("--points", required=True)
    s.add_argument("--labels")
    s.add_argument("--probs")
    s.add_argument("--out", help="per-point values CSV")
    s.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dcss: error: {exc}", file=sys.stderr)
        return 2
    except NumericalDivergence as exc:
        print(f"dcss: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
