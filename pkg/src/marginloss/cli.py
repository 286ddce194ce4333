"""``mll`` command line: toy, eval, sweep, gradcheck, sample-margins.

Exit codes: 0 success, 1 a tolerance/assertion check failed, 2 usage or IO error.
"""

import argparse
import dataclasses
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as mio
from .config import LossConfig, RunConfig, load_json, load_run_config
from .errors import ConfigError, FormatError, InsufficientImpostorsWarning, MarginLossError
from .experiment import holdout_verification, run_toy_loss
from .gradcheck import default_grid, run_gradcheck, sigma_zero_max_diff
from .margins import GENERATOR_INFO, assign_margins_plus, make_rng, sample_margins
from .metrics import (
    borda_count,
    cosine_scores,
    geometry_report,
    rank1,
    tar_at_far,
    verification_accuracy_kfold,
)
from .svg import embedding_svg
from .toy import TrainConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def threads():
    raw = os.environ.get("MLL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MLL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"MLL_THREADS must be >= 1, got {n}")
    return n


def _say(msg):
    print(msg, file=sys.stderr)


def _emit(obj, out_dir, name):
    text = mio.dumps_json(obj)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / name).write_text(text)
    sys.stdout.write(text)


# ---- toy -------------------------------------------------------------------


def _apply_iterations(train, n):
    drops = tuple(d for d in train.lr_drop_iterations if d < n)
    if drops != train.lr_drop_iterations:
        _say(f"note: --iterations {n} drops lr steps at {sorted(set(train.lr_drop_iterations) - set(drops))}")
    return dataclasses.replace(train, total_iterations=n, lr_drop_iterations=drops)


def resolve_run_config(args):
    cfg = load_run_config(args.config) if args.config else RunConfig()
    profile = getattr(args, "profile", None)
    if profile is not None and profile != cfg.profile:
        cfg.profile = profile
        if profile == "paper":
            cfg.train = TrainConfig.paper(scale=cfg.train.scale)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if args.iterations is not None:
        if args.iterations < 0:
            raise UsageError("--iterations must be >= 0")
        cfg.train = _apply_iterations(cfg.train, args.iterations)
    if args.losses:
        wanted = args.losses.split(",")
        known = {l.name: l for l in cfg.losses}
        missing = [w for w in wanted if w not in known]
        if missing:
            raise UsageError(f"unknown loss name(s) {missing}; config has {sorted(known)}")
        cfg.losses = [known[w] for w in wanted]
    cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    return cfg


def cmd_toy(args):
    cfg = resolve_run_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    if cfg.profile == "paper" and args.iterations is None:
        _say(f"paper profile ({cfg.train.total_iterations} iterations) is written to {out / 'config.json'} for reference only; "
             "pass --iterations to run a truncated schedule")
        return EXIT_OK
    summary = {}
    for loss in cfg.losses:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # arc overflow warnings fire every early step
            run = run_toy_loss(cfg, loss, cfg.seed)
        d = out / loss.name
        d.mkdir(exist_ok=True)
        (d / "training_log.csv").write_text(run.log.to_csv())
        mio.write_embeddings(d / "embeddings.bin", run.embeddings.features, run.embeddings.labels)
        entry = {"final_accuracy": run.log.final_accuracy, "iterations": cfg.train.total_iterations}
        if run.report is not None:
            mio.write_json(d / "geometry.json", run.report.to_dict())
            title = f"{loss.name}  acc {run.log.final_accuracy:.4f}"
            (d / "scatter.svg").write_text(embedding_svg(run.embeddings.features, run.embeddings.labels, run.report, title))
            entry.update(mean_std=run.report.mean_std, min_angle_deg=run.report.min_angle_deg)
        summary[loss.name] = entry
        _say(f"{loss.name}: accuracy {run.log.final_accuracy:.4f} -> {d}")
    mio.write_json(out / "summary.json", summary)
    return EXIT_OK


# ---- eval ------------------------------------------------------------------


def cmd_eval(args):
    emb, labels = mio.read_embeddings(args.embeddings)
    report = {"embeddings": str(args.embeddings), "n": int(emb.shape[0]), "d": int(emb.shape[1])}
    if args.pairs:
        protocol = mio.read_pairs(args.pairs)
        gen, imp, scores = cosine_scores(emb, protocol)
        if not args.no_verification:
            res = verification_accuracy_kfold(scores, protocol.genuine, protocol.k, protocol.folds)
            report["verification"] = dataclasses.asdict(res)
        tars = []
        for far in args.far or []:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", InsufficientImpostorsWarning)
                tar, thr, got = tar_at_far(gen, imp, far)
            tars.append({"far_target": far, "tar": tar, "threshold": thr, "far": got,
                         "insufficient_impostors": bool(caught)})
        if tars:
            report["tar_at_far"] = tars
        if args.dump_scores:
            report["scores"] = {"genuine": gen.tolist(), "impostor": imp.tolist()}
    elif args.far:
        raise UsageError("--far needs --pairs")
    if args.gallery:
        gal, gal_labels = mio.read_embeddings(args.gallery)
        if labels is None or gal_labels is None:
            raise UsageError("rank-1 needs label files next to both the probe and gallery embeddings")
        report["rank1"] = rank1(emb, labels, gal, gal_labels)
    if args.geometry:
        if labels is None:
            raise UsageError("--geometry needs a label file next to the embeddings")
        report["geometry"] = geometry_report(emb, labels).to_dict()
    _emit(report, getattr(args, "out", None), "eval.json")
    return EXIT_OK


# ---- sweep -----------------------------------------------------------------

_GRID_KEYS = {"table": {"mode", "benchmarks", "groups"}, "train": {"mode", "run", "seeds", "groups"}}


def _grid_groups(grid, key):
    groups = grid.get("groups")
    if not isinstance(groups, list) or not groups:
        raise ConfigError("grid needs a non-empty 'groups' list")
    for g in groups:
        if not isinstance(g, dict) or set(g) != {"name", key}:
            raise ConfigError(f"each group needs exactly 'name' and '{key}', got {sorted(g) if isinstance(g, dict) else g!r}")
    return groups


def _table_sweep(grid):
    benchmarks = list(grid["benchmarks"])
    names, rows, starts = [], [], []
    for g in _grid_groups(grid, "configs"):
        starts.append(len(names))
        for c in g["configs"]:
            if set(c) != {"name", "accuracy"}:
                raise ConfigError(f"config entries need 'name' and 'accuracy', got {sorted(c)}")
            if len(c["accuracy"]) != len(benchmarks):
                raise ConfigError(f"{g['name']}/{c['name']}: {len(c['accuracy'])} accuracies for {len(benchmarks)} benchmarks")
            names.append(f"{g['name']}/{c['name']}")
            rows.append(c["accuracy"])
    return names, benchmarks, np.array(rows, dtype=np.float64), starts


def _train_job(job):
    run_cfg, loss_cfg, seed = job
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return holdout_verification(run_cfg, loss_cfg, seed)


def _train_sweep(grid, args):
    run_cfg = RunConfig.from_dict(grid.get("run", {}), where="grid.run")
    if getattr(args, "iterations", None) is not None:
        run_cfg.train = _apply_iterations(run_cfg.train, args.iterations)
    base = getattr(args, "seed", None)
    base = run_cfg.seed if base is None else base
    seeds = [base + int(s) for s in grid.get("seeds", [0])]
    names, losses, starts = [], [], []
    for g in _grid_groups(grid, "losses"):
        starts.append(len(names))
        for i, l in enumerate(g["losses"]):
            lc = RunConfig.from_dict({"losses": [l]}, where=f"grid.{g['name']}[{i}]").losses[0]
            names.append(f"{g['name']}/{lc.name}")
            losses.append(lc)
    jobs = [(run_cfg, l, s) for l in losses for s in seeds]
    n = threads()
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            accs = list(pool.map(_train_job, jobs))
    else:
        accs = [_train_job(j) for j in jobs]
    acc = np.array(accs).reshape(len(losses), len(seeds))
    return names, [f"seed{s}" for s in seeds], acc, starts


def cmd_sweep(args):
    grid = load_json(args.grid)
    if not isinstance(grid, dict) or grid.get("mode") not in _GRID_KEYS:
        raise ConfigError(f"{args.grid}: 'mode' must be one of {sorted(_GRID_KEYS)}")
    extra = set(grid) - _GRID_KEYS[grid["mode"]]
    if extra:
        raise ConfigError(f"{args.grid}: unknown key(s) {sorted(extra)}")
    if grid["mode"] == "table":
        names, benchmarks, acc, starts = _table_sweep(grid)
    else:
        names, benchmarks, acc, starts = _train_sweep(grid, args)
    table = borda_count(acc, starts, names, benchmarks)
    out = getattr(args, "out", None)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "borda.csv").write_text(table.to_csv())
    _emit(table.to_dict(), out, "borda.json")
    return EXIT_OK


# ---- gradcheck -------------------------------------------------------------


def cmd_gradcheck(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    grid = default_grid()
    if args.only:
        grid = [(n, s) for n, s in grid if any(n.startswith(p) for p in args.only.split(","))]
        if not grid:
            raise UsageError(f"--only {args.only!r} matches nothing; names: {[n for n, _ in default_grid()]}")
    seed = getattr(args, "seed", None) or 0
    results = run_gradcheck(args.trials, seed, grid)
    zero = sigma_zero_max_diff(args.trials, seed)
    ok = all(r.passed for r in results) and zero == 0.0
    for r in results:
        _say(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.failures}/{r.trials} failures, worst {r.worst:.3g}")
    _say(f"{'PASS' if zero == 0.0 else 'FAIL'} sigma=0 equivalence: max |diff| {zero!r}")
    report = {
        "trials": args.trials,
        "results": [dict(dataclasses.asdict(r), passed=r.passed) for r in results],
        "sigma_zero_max_abs_diff": zero,
        "passed": ok,
    }
    _emit(report, getattr(args, "out", None), "gradcheck.json")
    return EXIT_OK if ok else EXIT_FAIL


# ---- sample-margins ----------------------------------------------------------


def cmd_sample_margins(args):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    seed = getattr(args, "seed", None) or 0
    rng = make_rng(seed)
    draw = sample_margins(args.n, args.m, args.sigma, rng)
    v = draw.values
    report = {
        "n": args.n, "m": args.m, "sigma": args.sigma, "seed": seed,
        "mean": float(v.mean()), "std": float(v.std(ddof=1)) if args.n > 1 else 0.0,
        "min": float(v.min()), "max": float(v.max()),
        "quantiles": {str(q): float(np.quantile(v, q)) for q in (0.01, 0.25, 0.5, 0.75, 0.99)},
        "generator": GENERATOR_INFO,
    }
    if args.cos:
        cos = np.array([float(c) for c in args.cos.split(",")])
        if len(cos) != args.n:
            raise UsageError(f"--cos has {len(cos)} values for --n {args.n}")
        report["plus_assignment"] = assign_margins_plus(v, cos).tolist()
    if args.values:
        report["values"] = v.tolist()
    _emit(report, getattr(args, "out", None), "margins.json")
    return EXIT_OK


# ---- parser ------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the global flags appear before or after the verb
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--profile", choices=["toy", "paper"], default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="mll", description="Elastic and fixed margin softmax losses: toy training, evaluation, sweeps.", parents=[common])
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("toy", parents=[common], help="train the 8-class 2-D toy problem under each configured loss")
    t.add_argument("config", nargs="?", help="JSON run config (defaults built in)")
    t.add_argument("--iterations", type=int, help="override total iterations; later lr drops are removed")
    t.add_argument("--losses", help="comma-separated subset of the config's loss names")
    t.set_defaults(func=cmd_toy)

    e = sub.add_parser("eval", parents=[common], help="metrics on precomputed embeddings")
    e.add_argument("embeddings", help="binary embedding file (labels read from the sibling .labels file)")
    e.add_argument("--pairs", help="pairs file for verification and TAR@FAR")
    e.add_argument("--no-verification", action="store_true", help="skip k-fold verification accuracy")
    e.add_argument("--far", type=float, action="append", help="FAR target for TAR@FAR (repeatable)")
    e.add_argument("--gallery", help="gallery embedding file; the main file is then the probe set for rank-1")
    e.add_argument("--geometry", action="store_true", help="2-D class geometry report")
    e.add_argument("--dump-scores", action="store_true", help="include raw genuine/impostor scores")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="Borda-count selection over a parameter grid")
    s.add_argument("grid", help="JSON grid: mode 'table' ingests accuracies, mode 'train' runs toy trainings")
    s.add_argument("--iterations", type=int, help="override iterations for train-mode grids")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all loss gradients")
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--only", help="comma-separated name prefixes from the default grid")
    g.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("sample-margins", parents=[common], help="draw elastic margins and print their statistics")
    m.add_argument("--n", type=int, default=100_000)
    m.add_argument("--m", type=float, default=0.5)
    m.add_argument("--sigma", type=float, default=0.05)
    m.add_argument("--cos", help="comma-separated target cosines; adds the plus assignment")
    m.add_argument("--values", action="store_true", help="include the raw draws")
    m.set_defaults(func=cmd_sample_margins)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads()
        return args.func(args)
    except (UsageError, ConfigError, FormatError) as e:
        _say(f"mll {args.verb}: {e}")
        return EXIT_USAGE
    except OSError as e:
        where = e.filename if e.filename is not None else ""
        _say(f"mll {args.verb}: {where}: {e.strerror or e}")
        return EXIT_USAGE
    except (MarginLossError, ValueError, IndexError) as e:
        _say(f"mll {args.verb}: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
