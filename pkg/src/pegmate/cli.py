"""Command-line entry point: ``pegmate <command> [--config FILE] [--seed N] [--backend B] [--out DIR]``.

Exit codes: 0 on success, 2 on validation errors, 3 on backend failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .config import build_config, read_config_file
from .detection import detect_candidates, load_scene, write_candidates
from .errors import BackendError, PegmateError, ValidationError
from .matcher import match_hole
from .pipeline import (
    emit_report,
    make_backend,
    make_e2e_worlds,
    peg_input,
    run_ablation,
    run_e2e,
    run_matching_experiment,
    run_trial,
)
from .pose import YawEstimator, se2_estimate
from .worldgen import (
    SyntheticWorld,
    make_matching_benchmark,
    make_near_tie_benchmark,
    make_panel,
    render_panel,
    save_scene,
)

EXIT_OK, EXIT_VALIDATION, EXIT_BACKEND = 0, 2, 3


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dir_digests(root, prefix):
    root = Path(root)
    return {f"{prefix}/{p.relative_to(root).as_posix()}": _file_digest(p)
            for p in sorted(root.rglob("*")) if p.is_file()}


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _write_manifest(out, inputs, outputs):
    files = {p: _file_digest(Path(out) / p) for p in sorted(outputs)}
    _write_json(Path(out) / "manifest.json", {"files": files, "inputs": dict(sorted(inputs.items()))})


class _Context:
    def __init__(self, args):
        items = read_config_file(args.config) if args.config else {}
        self.config, self.experiment, self.vlm = build_config(items, seed=args.seed, backend=args.backend)
        self.out = Path(args.out)
        self.inputs = {"config": _file_digest(args.config)} if args.config else {}
        self.inputs["settings"] = hashlib.sha256(
            json.dumps({"pipeline": self.config.to_dict(), "experiment": self.experiment},
                       sort_keys=True).encode()).hexdigest()

    def backend(self):
        extra = {"model": self.vlm["model"]} if "model" in self.vlm else {}
        return make_backend(self.config, url=self.vlm["url"], token=self.vlm["token"], **extra)


def _scene(ctx, args):
    ctx.inputs.update(_dir_digests(args.scene, "scene"))
    return load_scene(args.scene)


def cmd_gen_world(ctx, args):
    worlds = make_panel(ctx.experiment["world.n_pegs"], seed=ctx.config.seed, clutter=ctx.experiment["world.clutter"])
    outputs = []
    for i, scene in enumerate(render_panel(worlds, ctx.config.render)):
        save_scene(scene, ctx.out / f"scene_{i:02d}")
        outputs += [f"scene_{i:02d}/{p}" for p in sorted(q.name for q in (ctx.out / f"scene_{i:02d}").iterdir())]
    _write_manifest(ctx.out, ctx.inputs, outputs)
    print(f"wrote {len(worlds)} scenes to {ctx.out}")


def cmd_detect(ctx, args):
    scene = _scene(ctx, args)
    cands = detect_candidates(scene, ctx.config.z_threshold_m, ctx.config.margin_px)
    write_candidates(cands, ctx.out)
    _write_manifest(ctx.out, ctx.inputs, [p.name for p in sorted(ctx.out.iterdir()) if p.name != "manifest.json"])
    print(f"{len(cands)} candidates: {[c.index for c in cands]}")


def _match(ctx, scene):
    cands = detect_candidates(scene, ctx.config.z_threshold_m, ctx.config.margin_px)
    if not cands:
        raise ValidationError("no candidate survived the height filter")
    return cands, match_hole(peg_input(scene), cands, ctx.backend(), ctx.config.strategy)


def cmd_match(ctx, args):
    _, outcome = _match(ctx, _scene(ctx, args))
    _write_json(ctx.out / "match.json", outcome.to_dict())
    _write_manifest(ctx.out, ctx.inputs, ["match.json"])
    print(f"ranking: {outcome.ranking}")


def cmd_pose(ctx, args):
    scene = _scene(ctx, args)
    cands, outcome = _match(ctx, scene)
    cand = next(c for c in cands if c.index == outcome.selected)
    est = YawEstimator(ctx.backend()).fit(peg_input(scene)).predict(cand, group=f"{ctx.config.seed}:{cand.index}")
    pose = se2_estimate(cand, est)
    _write_json(ctx.out / "pose.json", {"candidate": cand.index, "yaw": est.to_dict(), "pose": pose.to_dict()})
    _write_manifest(ctx.out, ctx.inputs, ["pose.json"])
    print(f"hole {cand.index}: x={pose.x:.4f} m y={pose.y:.4f} m yaw={pose.yaw:.2f} deg")


def cmd_insert(ctx, args):
    scene = _scene(ctx, args)
    if "world" not in scene.meta:
        raise ValidationError("scene carries no world description; insertion needs a synthetic scene")
    world = SyntheticWorld.from_dict(scene.meta["world"])
    log = run_trial(scene, world, ctx.config, ctx.backend(), trial="0")
    _write_json(ctx.out / "attempt_log.json", log.to_dict())
    _write_manifest(ctx.out, ctx.inputs, ["attempt_log.json"])
    print(f"status: {log.status}; attempts: {len(log.attempts())}")


def cmd_e2e(ctx, args):
    ex = ctx.experiment
    worlds = make_e2e_worlds(ex["world.n_boards"], ex["world.n_pegs"], seed=ctx.config.seed, clutter=ex["world.clutter"])
    result = run_e2e(worlds, ctx.config, ctx.backend())
    emit_report({"e2e": result}, ctx.out, ctx.inputs)
    s = result.summary()
    print(f"first attempt {s['first_attempt_successes']}/{s['trials']}, "
          f"with retry {s['with_retry_successes']}/{s['trials']}")


def _benchmark(ctx):
    ex = ctx.experiment
    return make_matching_benchmark(ex["bench.n"], ex["bench.clearance_mm"], ex["bench.separation_mm"],
                                   seed=ctx.config.seed)


def cmd_ablate(ctx, args):
    backend = ctx.backend()
    results = {"ablation": run_ablation(_benchmark(ctx), backend=backend)}
    near = make_near_tie_benchmark(ctx.experiment["bench.near_tie_pairs"], seed=ctx.config.seed)
    results["ablation_near_tie"] = run_ablation(near, backend=backend)
    emit_report(results, ctx.out, ctx.inputs)
    for r in results["ablation"].rows:
        print(f"{r['strategy']:>22}: top1={r['top1']} top2={r['top2']} top3={r['top3']}")


def cmd_report(ctx, args):
    result = run_matching_experiment(_benchmark(ctx), ctx.backend(), ctx.config.strategy)
    emit_report({"matching": result}, ctx.out, ctx.inputs)
    print(" ".join(f"{k}={v}/{len(result.confusion)}" for k, v in result.accuracy.items()))


COMMANDS = {
    "gen-world": (cmd_gen_world, "generate a board and render one scene per peg"),
    "detect": (cmd_detect, "detect hole candidates in a scene directory"),
    "match": (cmd_match, "rank a scene's candidates for its peg"),
    "pose": (cmd_pose, "estimate the SE(2) pose of the selected hole"),
    "insert": (cmd_insert, "run one closed-loop trial on a synthetic scene"),
    "e2e": (cmd_e2e, "batch of closed-loop trials with a report"),
    "ablate": (cmd_ablate, "matching accuracy for every input strategy"),
    "report": (cmd_report, "matching benchmark with confusion grid and top-k chart"),
}

_SCENE_COMMANDS = ("detect", "match", "pose", "insert")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--backend", choices=("oracle", "remote"), help="overrides the config backend")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    parser = argparse.ArgumentParser(prog="pegmate", description="Peg/hole matching and insertion simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in _SCENE_COMMANDS:
            p.add_argument("--scene", required=True, help="scene directory")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        ctx = _Context(args)
        COMMANDS[args.command][0](ctx, args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except PegmateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
