"""Command-line front end: ``dgflow {synth,train,predict,eval,neb,explore}``.

Every command writes ``manifest.json`` (configuration echo, seed, library
versions, timing) into its output directory. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure. On failure a JSON
error record is printed to stderr and, when possible, written to
``error.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__, config, dataio, explore, flow, geom
from . import numerics as nx
from . import pathband as pb
from .tsdvnet import NetConfig, TSDVNet, checkpoint

log = logging.getLogger("dgflow")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def _versions():
    import scipy
    return {"dgflow": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])


def _jsonable(cfg):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()}


def _load_records(directory):
    try:
        return dataio.load_dataset(directory)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {exc.filename}") from None


def _select(records, directory, split):
    if split == "all":
        return records
    path = os.path.join(directory, "splits.json")
    if not os.path.exists(path):
        raise DataError(f"{directory} has no splits.json; use --split all")
    with open(path) as fh:
        ids = json.load(fh)[split]
    by_id = {r.id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"split {split!r} names unknown records: {missing[:3]}")
    return [by_id[i] for i in ids]


def _net_config(cfg):
    try:
        return NetConfig(n_blocks=cfg["net.blocks"], atom_dim=cfg["net.atom_dim"],
                         pair_dim=cfg["net.pair_dim"], n_rbf=cfg["net.n_rbf"],
                         cutoff=cfg["net.cutoff"])
    except ValueError as exc:
        raise config.ConfigError(str(exc)) from None


def _train_config(cfg):
    try:
        return flow.TrainConfig(sigma=cfg["train.sigma"], batch_size=cfg["train.batch_size"],
                                lr=cfg["train.lr"], decay_factor=cfg["train.decay"],
                                patience=cfg["train.patience"], epochs=cfg["train.epochs"],
                                seed=cfg["seed"], val_samples=cfg["train.val_samples"])
    except ValueError as exc:
        raise config.ConfigError(str(exc)) from None


def _load_model(path, cfg):
    try:
        model, meta = checkpoint.load(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except checkpoint.CheckpointError as exc:
        raise DataError(f"{path}: {exc}") from None
    wanted = _net_config(cfg).to_dict()
    default = _net_config(config.defaults()).to_dict()
    for key, value in wanted.items():
        if value != default[key] and value != model.config.to_dict()[key]:
            raise config.ConfigError(f"checkpoint {key}={model.config.to_dict()[key]} "
                                     f"conflicts with configured {value}")
    return model, meta


def _mirror_rmsd(ref, mov):
    """RMSD allowing for the reflection that distances cannot resolve."""
    return min(geom.rmsd(ref, mov), geom.rmsd(ref, -np.asarray(mov)))


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg):
    lo, hi = cfg["synth.min_atoms"], cfg["synth.max_atoms"]
    try:
        spec = dataio.SyntheticSpec(n_atoms=(lo, hi), displacement=cfg["synth.displacement"],
                                    warp_seed=cfg["synth.warp_seed"], size=cfg["synth.size"],
                                    density=cfg["synth.density"])
    except ValueError as exc:
        raise config.ConfigError(str(exc)) from None
    records = dataio.synth_reactions(spec, seed=cfg["seed"])
    dataio.save_dataset(args.out, records)
    try:
        parts = dataio.split(records, cfg["split.fractions"], seed=cfg["seed"])
    except ValueError as exc:
        raise config.ConfigError(str(exc)) from None
    _write_json(os.path.join(args.out, "splits.json"),
                {name: [r.id for r in part] for name, part in zip(("train", "val", "test"), parts)})
    return {"records": len(records)}


def cmd_train(args, cfg):
    records = _load_records(args.data)
    train_set = _select(records, args.data, "train")
    val_set = _select(records, args.data, "val")
    if not train_set or not val_set:
        raise DataError("training needs non-empty train and val splits")
    model = TSDVNet(_net_config(cfg), seed=cfg["seed"])
    res = flow.train(model, train_set, val_set, _train_config(cfg),
                     log_path=os.path.join(args.out, "train_log.csv"), checkpoint_dir=args.out)
    meta = {"best_epoch": res.best_epoch, "best_val": res.best_val}
    checkpoint.save(os.path.join(args.out, "model.ckpt"), model, meta)
    groups = {}
    for r in val_set:
        groups.setdefault(r.n, []).append(r)
    zero = sum(flow.zero_model_loss(flow.make_batch(g)) * len(g) for g in groups.values()) / len(val_set)
    summary = dict(meta, zero_model_val=zero, parameters=model.n_parameters())
    _write_json(os.path.join(args.out, "train.json"), summary)
    return summary


def _predict_model(args, cfg):
    if args.checkpoint:
        return _load_model(args.checkpoint, cfg)[0]
    log.info("no checkpoint given: predicting the initial guess")
    return flow.ZeroVelocity()


def cmd_predict(args, cfg):
    if not args.checkpoint:
        raise config.ConfigError("predict requires --checkpoint")
    model, _ = _load_model(args.checkpoint, cfg)
    records = _select(_load_records(args.data), args.data, args.split)
    out, rows = [], []
    for rec in records:
        pred = flow.predict_ts(model, rec, dt=cfg["flow.dt"])
        out.append(dataio.ReactionRecord(rec.id, rec.reactant, rec.product, pred.ts,
                                         provenance=f"predicted:{os.path.basename(args.checkpoint)}"))
        rows.append([rec.id, pred.steps, float(pred.stress), pred.status])
    dataio.save_dataset(args.out, out)
    _write_csv(os.path.join(args.out, "predictions.csv"), ["id", "steps", "stress", "status"], rows)
    return {"records": len(out)}


EVAL_COLUMNS = ["id", "rmsd", "dmae", "baseline_dmae", "abs_delta_e", "f_max", "f_rms",
                "n_negative", "saddle"]


def evaluate_records(truth, preds, calculator="none"):
    """Per-record metric rows (see ``EVAL_COLUMNS``) for matching ids."""
    by_id = {r.id: r for r in truth}
    rows = []
    for p in preds:
        if p.id not in by_id:
            raise DataError(f"prediction {p.id!r} has no reference record")
        t = by_id[p.id]
        if not np.array_equal(p.Z, t.Z):
            raise DataError(f"prediction {p.id!r} does not match the reference atoms")
        D_ts = geom.pairwise_distances(t.ts)
        guess = flow.initial_guess(geom.pairwise_distances(t.reactant), geom.pairwise_distances(t.product))
        row = [p.id, float(_mirror_rmsd(t.ts.R, p.ts.R)),
               float(geom.dmae(geom.pairwise_distances(p.ts), D_ts)), float(geom.dmae(guess, D_ts))]
        if calculator == "morse":
            calc = pb.MorseCluster(p.Z)
            dE = abs(calc.energy(p.ts.R) - calc.energy(t.ts.R))
            f_max, f_rms = geom.force_metrics(calc.forces(p.ts.R))
            masses = [geom.MASSES[int(z)] for z in p.Z]
            rep = pb.harmonic_analysis(pb.hessian_fd(calc, p.ts.R), masses, coords=p.ts.R)
            row += [float(dE), float(f_max), float(f_rms), rep.n_negative, int(rep.is_saddle)]
        else:
            row += [None, None, None, None, None]
        rows.append(row)
    return rows


def summarize_metrics(rows):
    """Aggregate statistics of ``evaluate_records`` rows."""
    cols = {name: [r[i] for r in rows if r[i] is not None] for i, name in enumerate(EVAL_COLUMNS)}
    out = {"n": len(rows)}
    for name in ("rmsd", "dmae", "baseline_dmae", "abs_delta_e", "f_max", "f_rms"):
        v = np.asarray(cols[name], dtype=float)
        out[name] = {"mean": float(v.mean()), "median": float(np.median(v))} if v.size else None
    sad = cols["saddle"]
    out["saddle_percent"] = 100.0 * float(np.mean(sad)) if sad else None
    return out


def cmd_eval(args, cfg):
    truth = _load_records(args.data)
    preds = _load_records(args.pred)
    rows = evaluate_records(truth, preds, cfg["eval.calculator"])
    _write_csv(os.path.join(args.out, "metrics.csv"), EVAL_COLUMNS, rows)
    summary = summarize_metrics(rows)
    _write_json(os.path.join(args.out, "summary.json"), summary)
    return summary


def _relaxed(calc, x):
    res = pb.relax(calc, x, fmax=1e-4, steps=2000)
    if not res.converged:
        log.warning("endpoint relaxation stopped at fmax=%.3g", res.fmax)
    return res.coords


def cmd_neb(args, cfg):
    if cfg["neb.surface"] == "muller-brown":
        calc = pb.MullerBrown()
        Z = [1]
        A = _relaxed(calc, np.array([cfg["neb.start"]]))
        B = _relaxed(calc, np.array([cfg["neb.end"]]))
        n = cfg["neb.images"]
        images = [A + (B - A) * k / (n - 1) for k in range(n)]
        masses = None
    else:
        if not args.data or not args.id:
            raise config.ConfigError("the morse surface needs --data and --id")
        rec = {r.id: r for r in _load_records(args.data)}.get(args.id)
        if rec is None:
            raise DataError(f"no record {args.id!r} in {args.data}")
        calc = pb.MorseCluster(rec.Z)
        Z = rec.Z
        A, B = _relaxed(calc, rec.reactant.R), _relaxed(calc, rec.product.R)
        anchors = []
        if args.pred:
            pred = {r.id: r for r in _load_records(args.pred)}.get(args.id)
            if pred is None:
                raise DataError(f"no prediction {args.id!r} in {args.pred}")
            anchors = [geom.kabsch_align(A, pred.ts.R)[0]]
        B = geom.kabsch_align(A, B)[0]
        images = pb.idpp_interpolate(A, B, cfg["neb.images"], anchors=anchors)
        masses = [geom.MASSES[int(z)] for z in Z]
    band = pb.cineb(calc, images, k=cfg["neb.k"], fmax=cfg["neb.fmax"], steps=cfg["neb.steps"],
                    climb=cfg["neb.climb"], trace_path=os.path.join(args.out, "trace.csv"))
    frames, comments = pb.path_frames(band.images, Z, band.energies)
    dataio.write_xyz(os.path.join(args.out, "band.xyz"), frames, comments)
    ts = band.ts
    coords = ts if ts.shape[-1] == 3 else None
    rep = pb.harmonic_analysis(pb.hessian_fd(calc, ts), masses, coords=coords)
    result = {"converged": band.converged, "steps": band.steps, "ts": ts.tolist(),
              "ts_energy": calc.energy(ts), "n_negative": rep.n_negative, "saddle": rep.is_saddle}
    if rep.is_saddle:
        ir = pb.irc(calc, ts, rep.mode(0), step=cfg["irc.step"], fmax=cfg["irc.fmax"], masses=masses)
        result["irc_endpoints"] = [e.tolist() for e in ir.endpoints]
        result["irc_endpoint_energies"] = [ir.forward_energies[-1], ir.reverse_energies[-1]]
        frames, comments = pb.path_frames(ir.reverse[::-1] + ir.forward[1:], Z)
        dataio.write_xyz(os.path.join(args.out, "irc.xyz"), frames, comments)
    _write_json(os.path.join(args.out, "neb.json"), result)
    if not band.converged:
        log.warning("CI-NEB did not converge in %d steps", band.steps)
    return {"converged": band.converged, "n_negative": rep.n_negative}


def cmd_explore(args, cfg):
    if not args.id:
        raise config.ConfigError("explore needs --id")
    rec = {r.id: r for r in _load_records(args.data)}.get(args.id)
    if rec is None:
        raise DataError(f"no record {args.id!r} in {args.data}")
    model = _predict_model(args, cfg)
    calc = pb.MorseCluster(rec.Z)
    masses = [geom.MASSES[int(z)] for z in rec.Z]
    gen = nx.rng(cfg["seed"])
    T = cfg["explore.temperature"]
    ends = []
    for conf in (rec.reactant, rec.product):
        x = _relaxed(calc, conf.R)
        rep = pb.harmonic_analysis(pb.hessian_fd(calc, x), masses, coords=x)
        ends.append((x, rep))
    samples = []
    for _ in range(cfg["explore.samples"]):
        R = pb.normal_mode_sample(ends[0][1], ends[0][0], T, gen)
        P = pb.normal_mode_sample(ends[1][1], ends[1][0], T, gen)
        r = dataio.ReactionRecord(rec.id, geom.Conformer(rec.Z, R), geom.Conformer(rec.Z, P), rec.ts)
        samples.append(flow.predict_ts(model, r, dt=cfg["flow.dt"]).ts)
    energies = [calc.energy(s.R) for s in samples]
    report = explore.cluster_ts_samples(samples, rec.ts, cfg["explore.k"], energies=energies,
                                        reference_energy=calc.energy(rec.ts.R), seed=cfg["seed"],
                                        sort=cfg["explore.sorted"])
    report.write_csv(os.path.join(args.out, "clusters.csv"))
    report.write_json(os.path.join(args.out, "clusters.json"))
    dataio.write_xyz(os.path.join(args.out, "samples.xyz"), samples,
                     [f"sample={i} cluster={int(c)}" for i, c in enumerate(report.labels)])
    return {"samples": len(samples), "clusters": len(report.clusters())}


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "neb": cmd_neb, "explore": cmd_explore}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser():
    parser = argparse.ArgumentParser(
        prog="dgflow",
        description="Distance-geometry flow matching for transition-state prediction.")
    parser.add_argument("--version", action="version", version=f"dgflow {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="root seed (overrides config and DGFLOW_SEED)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, default=1,
                        help="maximum worker count (records are processed serially)")
    common.add_argument("--deterministic", action="store_true",
                        help="force serial, fixed-order reductions")
    common.add_argument("-v", "--verbose", action="count", default=0)

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic reaction dataset")
    p.add_argument("--size", type=int)
    p = sub.add_parser("train", parents=[common], help="train a velocity model")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p = sub.add_parser("predict", parents=[common], help="predict transition states")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--dt", type=float)
    p = sub.add_parser("eval", parents=[common], help="score predictions against references")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--calculator", choices=("none", "morse"))
    p = sub.add_parser("neb", parents=[common], help="CI-NEB, Hessian and IRC on a toy surface")
    p.add_argument("--surface", choices=("muller-brown", "morse"))
    p.add_argument("--data")
    p.add_argument("--pred", help="prediction dataset used as the IDPP anchor")
    p.add_argument("--id")
    p.add_argument("--images", type=int)
    p = sub.add_parser("explore", parents=[common], help="normal-mode sampling and TS clustering")
    p.add_argument("--data", required=True)
    p.add_argument("--id")
    p.add_argument("--checkpoint")
    p.add_argument("--samples", type=int)
    p.add_argument("-k", type=int)
    return parser


FLAG_KEYS = {"size": "synth.size", "epochs": "train.epochs", "lr": "train.lr", "dt": "flow.dt",
             "calculator": "eval.calculator", "surface": "neb.surface", "images": "neb.images",
             "samples": "explore.samples", "k": "explore.k", "seed": "seed"}


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise config.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = str(value)
    return out


def _fail(code, exc, out_dir):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out_dir and os.path.isdir(out_dir):
        _write_json(os.path.join(out_dir, "error.json"), record)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = args.out
    try:
        cfg = config.load(args.config, _overrides(args))
        if args.threads < 1:
            raise config.ConfigError("--threads must be >= 1")
        os.makedirs(out_dir, exist_ok=True)
        log.info("configuration:\n%s", config.format_config(cfg))
        start = time.time()
        result = COMMANDS[args.command](args, cfg)
        manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                    "config": _jsonable(cfg), "seed": cfg["seed"], "versions": _versions(),
                    "threads": args.threads, "deterministic": args.deterministic,
                    "started": start, "elapsed_seconds": time.time() - start, "result": result}
        _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    except config.ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, out_dir)
    except (DataError, dataio.XYZFormatError, checkpoint.CheckpointError, FileNotFoundError,
            KeyError) as exc:
        return _fail(EXIT_DATA, exc, out_dir)
    except (FloatingPointError, np.linalg.LinAlgError, pb.IRCDiverged) as exc:
        return _fail(EXIT_NUMERIC, exc, out_dir)
    except ValueError as exc:
        return _fail(EXIT_DATA, exc, out_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
