"""Command line entry point: ``trajcube <command> ...``.

Exit status is 0 on success, 1 for usage errors and 2 for bad or
inconsistent input data.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__

log = logging.getLogger("trajcube")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajcube", description="4D trajectory prediction with weather feature cubes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-flight work (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic weather store and flight corpus")
    s.add_argument("--config", help="YAML/JSON config (synth section used)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("match", help="batch-mode feature cubes for every point of every flight")
    s.add_argument("--store", required=True)
    s.add_argument("--flights", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train the network on a corpus directory")
    s.add_argument("--data", required=True, help="directory holding store/ and train.jsonl")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("predict", help="generate trajectories after a warm-up window")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--flights", required=True)
    s.add_argument("--warmup", type=int, default=20)
    s.add_argument("--horizon", type=int, help="total track length (default: each flight's length)")
    s.add_argument("--config", help="overrides the checkpoint's predict section")
    s.add_argument("--out", required=True)
    s.add_argument("--geojson", help="also write a GeoJSON FeatureCollection here")
    s.add_argument("--figure", help="also draw predicted vs actual tracks to this PNG")

    s = sub.add_parser("baseline", help="no-learning reference: fly the filed plan at constant speed")
    s.add_argument("--flights", required=True)
    s.add_argument("--warmup", type=int, default=20)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="error report of predictions against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out", required=True, help="CSV report; JSON, histogram CSV and PNGs go alongside")
    s.add_argument("--bins", type=int, default=30)

    s = sub.add_parser("export-activations", help="convolutional feature maps of matched cubes")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--cubes", required=True, help="directory written by `match`")
    s.add_argument("--layer", type=int, choices=(1, 2), required=True)
    s.add_argument("--flight", help="flight id (default: first)")
    s.add_argument("--steps", default="0", help="comma-separated track indices (default 0)")
    s.add_argument("--out", required=True)
    return p


# -- commands -----------------------------------------------------------------------

def cmd_synth(args):
    from .config import load_config
    from .preprocess import write_flights
    from .synth import World, gen_flights, gen_weather, split_corpus

    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = World.from_config(cfg.synth)
    store = gen_weather(cfg.synth, world)
    store.save(out / "store")
    flights = gen_flights(cfg.synth, world)
    train, test = split_corpus(flights, cfg.data.train_fraction, cfg.data.split_seed)
    write_flights(out / "flights.jsonl", flights)
    write_flights(out / "train.jsonl", train)
    write_flights(out / "test.jsonl", test)
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=1))
    lengths = np.array([len(f) for f in flights])
    stats = {"flights": len(flights), "train": len(train), "test": len(test),
             "mean_length": float(lengths.mean()) if len(lengths) else 0.0,
             "min_length": int(lengths.min(initial=0)), "max_length": int(lengths.max(initial=0))}
    (out / "stats.json").write_text(json.dumps(stats, indent=1))
    print(f"wrote store ({store.georef.n} points) and {len(flights)} flights "
          f"({len(train)} train / {len(test)} test) to {out}")


def _load_store(path):
    from .featurecube import WeatherStore, build_index
    store = WeatherStore.load(path)
    return store, build_index(store)


def cmd_match(args):
    from .config import load_config
    from .pipeline import match_corpus, save_matched
    from .preprocess import read_flights

    cfg = load_config(args.config)
    store, index = _load_store(args.store)
    flights = read_flights(args.flights)
    matched = match_corpus(flights, store, index, cfg.match.grid, cfg.match.ab, cfg.match.tb, args.threads)
    save_matched(args.out, matched, cfg.match.grid)
    print(f"matched {sum(m.cubes.shape[0] for m in matched)} points of {len(matched)} flights into {args.out}")


def cmd_train(args):
    from .config import load_config
    from .mdnrnn.checkpoint import save_checkpoint
    from .mdnrnn.train import train
    from .pipeline import build_samples, fit_normalizer, match_corpus
    from .plotting import loss_curve
    from .preprocess import read_flights

    cfg = load_config(args.config)
    data = Path(args.data)
    store, index = _load_store(data / "store")
    flights = read_flights(data / "train.jsonl")
    matched = match_corpus(flights, store, index, cfg.match.grid, cfg.match.ab, cfg.match.tb, args.threads)
    normalizer = fit_normalizer(matched)
    samples = build_samples(matched, normalizer, cfg.data.plan_alpha)
    params, history = train(samples, cfg.model, cfg.train, seed=args.seed,
                            callback=lambda r: log.info("epoch %d loss/step %.4f", r.epoch, r.loss_per_step))
    out = Path(args.out)
    save_checkpoint(out, params, cfg.model, args.seed, cfg.train.epochs, extra={
        "normalizer": normalizer.to_json(), "config": cfg.to_json()})
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "loss_sum", "loss_per_step", "grad_norm"])
        for r in history:
            w.writerow([r.epoch, repr(r.lr), repr(r.loss), repr(r.loss_per_step), repr(r.grad_norm)])
    if history:
        loss_curve([r.epoch for r in history], [r.loss_per_step for r in history], out / "loss.png")
    last = history[-1].loss_per_step if history else float("nan")
    print(f"trained {len(history)} epochs on {len(samples)} flights; final loss/step {last:.4f}; wrote {out}")


def _load_model(path):
    from .config import config_from_dict
    from .mdnrnn.checkpoint import load_checkpoint
    from .preprocess import Normalizer

    params, model_cfg, manifest = load_checkpoint(path)
    if "normalizer" not in manifest:
        raise ValueError(f"{path}: checkpoint has no normalizer")
    cfg = config_from_dict(manifest.get("config"))
    if cfg.model != model_cfg:
        raise ValueError(f"{path}: model section disagrees with the stored tensors")
    return params, model_cfg, Normalizer.from_json(manifest["normalizer"]), cfg


def cmd_predict(args):
    from .config import load_config
    from .inference import NetworkPredictor
    from .pipeline import geojson_feature, ordered_map, predict_flight, prediction_record
    from .plotting import trajectories
    from .preprocess import read_flights

    params, model_cfg, normalizer, cfg = _load_model(args.ckpt)
    if args.config:
        override = load_config(args.config)
        cfg = type(cfg)(cfg.synth, cfg.match, cfg.data, cfg.model, cfg.train, override.predict)
    if args.warmup < 2:
        raise UsageError("--warmup must be at least 2")
    store, index = _load_store(args.store)
    flights = read_flights(args.flights)
    for f in flights:
        n = args.horizon or len(f)
        if args.warmup >= n:
            raise ValueError(f"flight {f.id}: warm-up {args.warmup} is not shorter than its {n} points")
    predictor = NetworkPredictor(params, model_cfg)
    m = cfg.match

    def one(f):
        return predict_flight(predictor, normalizer, f, store, index, args.warmup, cfg.predict.kalman,
                              m.grid, m.ab, m.tb, cfg.data.plan_alpha, args.horizon)

    preds = ordered_map(one, flights, args.threads)
    records = [prediction_record(f, p, args.warmup) for f, p in zip(flights, preds)]
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    if args.geojson:
        doc = {"type": "FeatureCollection", "features": [geojson_feature(r) for r in records]}
        Path(args.geojson).write_text(json.dumps(doc))
    if args.figure:
        trajectories(args.figure, [f.track for f in flights], [p.states for p in preds],
                     [f.plan.waypoints for f in flights], [p.sigma3_horizontal_nm() for p in preds])
    print(f"predicted {len(records)} flights into {args.out}")


def cmd_baseline(args):
    from .pipeline import baseline_prediction
    from .preprocess import read_flights

    if args.warmup < 2:
        raise UsageError("--warmup must be at least 2")
    flights = read_flights(args.flights)
    with open(args.out, "w", encoding="utf-8") as fh:
        for f in flights:
            if args.warmup >= len(f):
                raise ValueError(f"flight {f.id}: warm-up {args.warmup} is not shorter than its {len(f)} points")
            pos = baseline_prediction(f, args.warmup)
            track = np.column_stack([pos, f.track[args.warmup:, 3]])
            rec = {"id": f.id, "plan": np.asarray(f.plan.waypoints).tolist(), "track": track.tolist(),
                   "start_index": args.warmup}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    print(f"wrote plan-following predictions for {len(flights)} flights to {args.out}")


def cmd_eval(args):
    from .metrics import aggregate, evaluate, write_csv, write_histograms, write_json
    from .pipeline import read_records
    from .plotting import error_histograms, trajectories

    preds = read_records(args.pred)
    truth = {r["id"]: r for r in read_records(args.truth)}
    reports = []
    pairs = []
    for p in preds:
        t = truth.get(p["id"])
        if t is None:
            raise ValueError(f"no true track for predicted flight {p['id']}")
        lo = p["start_index"] - t["start_index"]
        if lo < 0:
            raise ValueError(f"flight {p['id']}: truth starts after the prediction")
        seg = t["track"][lo:lo + p["track"].shape[0]]
        if seg.shape[0] != p["track"].shape[0]:
            raise ValueError(f"flight {p['id']}: {p['track'].shape[0]} predicted points but only "
                             f"{seg.shape[0]} true points after index {p['start_index']}")
        reports.append(evaluate(p["track"], seg, p["id"]))
        pairs.append((t["track"], p["track"]))
    if not reports:
        raise ValueError("no predictions to evaluate")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    total = aggregate(reports)
    write_csv(out, reports)
    write_json(out.with_suffix(".json"), total)
    write_histograms(out.with_name(out.stem + "_hist.csv"), total, args.bins)
    error_histograms(total, out.with_name(out.stem + "_hist.png"), args.bins)
    trajectories(out.with_name(out.stem + "_tracks.png"), [a for a, _ in pairs], [b for _, b in pairs])
    s = total.summary()
    print(f"{s['flights']} flights, {s['points']} points: MAPHE {s['MAPHE_nm']:.3f} nmi, "
          f"MAPVE {s['MAPVE_ft']:.1f} ft, MATHE {s['MATHE_nm']:.3f} nmi, MATVE {s['MATVE_ft']:.1f} ft")


def cmd_export_activations(args):
    from .mdnrnn.network import conv_activations
    from .pipeline import load_matched, prepare_cubes
    from .plotting import activation_maps

    params, model_cfg, normalizer, cfg = _load_model(args.ckpt)
    entries, cubes, missing, _, grid = load_matched(args.cubes)
    if (grid.nx, grid.ny, 4) != tuple(model_cfg.cube_shape):
        raise ValueError("cube grid does not match the model's input shape")
    if not entries:
        raise ValueError("cube file holds no flights")
    entry = entries[0] if args.flight is None else next((e for e in entries if e["id"] == args.flight), None)
    if entry is None:
        raise ValueError(f"flight {args.flight} not in {args.cubes}")
    try:
        steps = [int(s) for s in args.steps.split(",") if s.strip()]
    except ValueError:
        raise UsageError("--steps must be comma-separated integers") from None
    for s in steps:
        if not 0 <= s < entry["rows"]:
            raise ValueError(f"step {s} outside flight {entry['id']} (0..{entry['rows'] - 1})")
    rows = [entry["offset"] + s for s in steps]
    x = prepare_cubes(cubes[rows], missing[rows], normalizer)
    acts = conv_activations(x, params, model_cfg, args.layer)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flight_id", "step", "map", "i", "j", "value"])
        for s, a in zip(steps, acts):
            for k in range(a.shape[2]):
                for i in range(a.shape[0]):
                    for j in range(a.shape[1]):
                        w.writerow([entry["id"], s, k, i, j, repr(float(a[i, j, k]))])
    activation_maps(acts[0], out.with_suffix(".png"))
    print(f"wrote layer-{args.layer} maps {acts.shape[1:]} for {len(steps)} step(s) to {out}")


COMMANDS = {
    "synth": cmd_synth,
    "match": cmd_match,
    "train": cmd_train,
    "predict": cmd_predict,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "export-activations": cmd_export_activations,
}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        # BLAS stays single-threaded so reductions never depend on --threads
        with threadpool_limits(limits=1):
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"trajcube {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, KeyError) as exc:
        print(f"trajcube {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
