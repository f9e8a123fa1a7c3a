"""Command-line entry points: simulate, track, fuse-train, evaluate, defaults.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
Log verbosity is read from ``MPMFUSE_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, DataError, MpmFuseError
from .formats import (
    atomic_write_bytes,
    logit_path,
    read_json,
    read_labels,
    read_logits,
    write_json,
    write_labels,
    write_logits,
    write_manifest,
)
from .fusion import BRANCHES, FusionParams, fuse, train_fusion
from .metrics import MetricReport, evaluate_sequence
from .sim import branch_logits, render_sequence, track_sequence

logger = logging.getLogger("mpmfuse")


def _load(args) -> dict:
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "mpm", None) is not None:
        cfg["track"]["mpm"] = args.mpm == "on"
    if getattr(args, "branches", None):
        names = [b.strip() for b in args.branches.split(",") if b.strip()]
        bad = [b for b in names if b not in BRANCHES]
        if bad or not names:
            raise ConfigError(f"unknown branch(es) {bad}; expected one of {list(BRANCHES)}", field="--branches")
        cfg["track"]["branch"] = names[0]
    if getattr(args, "tolerance", None) is not None:
        cfg["metrics"]["tolerance"] = args.tolerance
    return cfgmod.validate(cfg)


def _state_dict(s):
    if s is None:
        return None
    return {
        "position": list(s.position),
        "extent": list(s.extent),
        "velocity": list(s.velocity),
        "frames_since_observation": s.frames_since_observation,
    }


def _trace_json(result) -> list:
    return [
        {"frame": fr.frame, "predicted": [None if p is None else list(p) for p in fr.predicted],
         "states": [_state_dict(s) for s in fr.states]}
        for fr in result.trace
    ]


def cmd_simulate(args) -> int:
    cfg = _load(args)
    scenario = cfgmod.build_scenario(cfg)
    if scenario.num_objects == 0:
        raise ConfigError("scenario needs at least one object", field="scenario.objects")
    out = Path(args.out)
    gt = render_sequence(scenario)
    files = [out / "gt.lbl", out / "config.json"]
    write_labels(files[0], gt, scenario.num_objects)
    atomic_write_bytes(files[1], cfgmod.dumps_config(cfg).encode())

    raw_m = []
    for branch in ("C", "S", "M-"):
        for t in range(scenario.frames):
            z = branch_logits(scenario, branch, t, gt[t])
            if branch == "M-":
                # stored precision is what downstream commands see
                z = z.astype("<f4").astype(np.float64)
                raw_m.append(z)
            path = logit_path(out, branch, t)
            write_logits(path, z)
            files.append(path)

    result = track_sequence(raw_m, gt[0], scenario.num_objects, cfgmod.build_mpm_config(cfg), mpm=True,
                            keep_logits=True)
    for t, z in enumerate(result.blended):
        path = logit_path(out, "M+", t)
        write_logits(path, z)
        files.append(path)
    write_manifest(out, "simulate", files, {"frames": scenario.frames, "objects": scenario.num_objects,
                                            "seed": cfg["seed"]})
    logger.info("simulated %d frames, %d objects into %s", scenario.frames, scenario.num_objects, out)
    return 0


def _load_data(data_dir: Path, branches):
    gt, n = read_labels(data_dir / "gt.lbl")
    logits = {}
    for b in branches:
        frames = []
        for t in range(gt.shape[0]):
            p = logit_path(data_dir, b, t)
            if not p.exists():
                raise DataError(f"missing logits for branch {b}, frame {t}: {p}")
            z = read_logits(p)
            if z.shape != (n + 1, *gt.shape[1:]):
                raise DataError(f"{p}: logits shape {z.shape} does not match header "
                                f"({n + 1} channels, {gt.shape[1]}x{gt.shape[2]})")
            frames.append(z)
        logits[b] = frames
    return gt, n, logits


def cmd_track(args) -> int:
    cfg = _load(args)
    data = Path(args.data)
    branch = cfg["track"]["branch"]
    gt, n, logits = _load_data(data, [branch])
    mpm_on = cfg["track"]["mpm"]
    adapt = cfg["mpm"]["adapt_steps"]
    result = track_sequence(logits[branch], gt[0], n, cfgmod.build_mpm_config(cfg), mpm=mpm_on,
                            gt=gt if adapt else None, adapt_steps=adapt, adapt_lr=cfg["mpm"]["lr"],
                            adapt_weight_decay=cfg["mpm"]["weight_decay"], max_norm=cfg["mpm"]["clip_norm"])
    report = evaluate_sequence(result.labels, gt, n, cfg["metrics"]["tolerance"])

    out = Path(args.out)
    files = [out / "pred.lbl", out / "trace.json", out / "report.json"]
    write_labels(files[0], result.labels, n)
    write_json(files[1], _trace_json(result))
    write_json(files[2], {**report.to_dict(), "branch": branch, "mpm": mpm_on})
    write_manifest(out, "track", files)
    print(f"J={report.j:.6f} F={report.f:.6f} J&F={report.jf:.6f} (branch {branch}, mpm {'on' if mpm_on else 'off'})")
    return 0


def cmd_fuse_train(args) -> int:
    cfg = _load(args)
    data = Path(args.data)
    gt, n, logits = _load_data(data, BRANCHES)
    stacks = [np.stack([logits[b][t] for b in BRANCHES]) for t in range(gt.shape[0])]
    params, schedule, optimizer, clamp = cfgmod.build_fusion(cfg, args.steps)
    if args.init:
        params = FusionParams.from_dict(read_json(args.init))
    result = train_fusion(list(zip(stacks, gt)), params, schedule, optimizer, cfg["fusion"]["clip_norm"], clamp)

    fused = np.stack([np.argmax(fuse(s, result.params, clamp), axis=0) for s in stacks]).astype(np.uint8)
    out = Path(args.out)
    files = [out / "fusion_params.json", out / "loss_trace.txt", out / "fused.lbl"]
    write_json(files[0], result.params.to_dict())
    atomic_write_bytes(files[1], "".join(f"{v!r}\n" for v in result.losses).encode())
    write_labels(files[2], fused, n)
    write_manifest(out, "fuse-train", files, {"steps": schedule.total_steps})
    print(f"trained {schedule.total_steps} steps: loss {result.initial_loss:.6f} -> {result.final_loss:.6f}")
    return 0


def _sequence_pairs(pred: Path, gt: Path):
    if pred.is_dir() != gt.is_dir():
        raise DataError("--pred and --gt must both be files or both be directories")
    if not pred.is_dir():
        return [(pred.stem, pred, gt)]
    pnames = {p.name for p in pred.glob("*.lbl")}
    gnames = {p.name for p in gt.glob("*.lbl")}
    if pnames != gnames:
        raise DataError(f"sequence mismatch: only in pred {sorted(pnames - gnames)}, "
                        f"only in gt {sorted(gnames - pnames)}")
    if not pnames:
        raise DataError(f"no .lbl sequences in {pred}")
    return [(Path(name).stem, pred / name, gt / name) for name in sorted(pnames)]


def cmd_evaluate(args) -> int:
    tol = args.tolerance
    sequences = {}
    for name, p, g in _sequence_pairs(Path(args.pred), Path(args.gt)):
        pl, pn = read_labels(p)
        gl, gn = read_labels(g)
        if pn != gn:
            missing = sorted(set(range(1, gn + 1)) - set(range(1, pn + 1)))
            extra = sorted(set(range(1, pn + 1)) - set(range(1, gn + 1)))
            raise DataError(f"{name}: object id mismatch, missing in pred {missing}, unexpected in pred {extra}")
        sequences[name] = evaluate_sequence(pl, gl, gn, tol)
    j = float(np.mean([r.j for r in sequences.values()]))
    f = float(np.mean([r.f for r in sequences.values()]))
    report = {"j": j, "f": f, "jf": (j + f) / 2,
              "sequences": {k: r.to_dict() for k, r in sorted(sequences.items())}}
    out = Path(args.out)
    write_json(out / "report.json", report)
    write_manifest(out, "evaluate", [out / "report.json"])
    print(f"J={j:.6f} F={f:.6f} J&F={report['jf']:.6f}")
    return 0


def cmd_defaults(args) -> int:
    sys.stdout.write(cfgmod.dumps_config(cfgmod.default_config()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpmfuse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--config", help="JSON run configuration (defaults if omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", required=True, help="directory written by 'simulate'")

    sp = sub.add_parser("simulate", help="render a scenario and its four branch logit streams")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("track", help="track one branch with or without the motion prior")
    common(sp, data=True)
    sp.add_argument("--mpm", choices=("on", "off"))
    sp.add_argument("--branches", help="branch to track (first of a comma-separated list)")
    sp.add_argument("--tolerance", type=float, help="boundary tolerance in pixels")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("fuse-train", help="train the four-branch fusion weights")
    common(sp, data=True)
    sp.add_argument("--init", help="start from a saved fusion_params.json")
    sp.add_argument("--steps", type=int, help="override fusion.total_steps")
    sp.set_defaults(func=cmd_fuse_train)

    sp = sub.add_parser("evaluate", help="score predicted label sequences against ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tolerance", type=float)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("defaults", help="print the default configuration")
    sp.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MPMFUSE_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MpmFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
