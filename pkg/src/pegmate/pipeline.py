"""Closed-loop orchestration and experiment harnesses.

A trial runs detection, identification, yaw estimation and insertion on one
rendered scene, retrying with the next-ranked hole and the next-ranked yaw
hypothesis when an insertion fails. Harnesses aggregate trials and matching
runs into reports whose bytes depend only on seeds and configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .detection import CROP_MARGIN_PX, DEPTH_VIEW, Z_THRESHOLD_M, detect_candidates
from .errors import (
    BackendError,
    EmptyDatasetError,
    IoError,
    PegmateError,
    TransportError,
    ValidationError,
)
from .geometry import Polygon2D
from .insertion import ContactWorld, FailureMode, SpiralParams, simulate_attempt
from .matcher import (
    InputStrategy,
    MatcherBackend,
    OracleBackend,
    PegInput,
    RemoteBackend,
    match_hole,
)
from .pose import canonicalize, estimate_yaw, se2_estimate, yaw_context_for
from .worldgen import RenderConfig, SyntheticWorld, _board_key, make_panel, render_panel

ENV_URL = "PEGMATE_VLM_URL"
ENV_TOKEN = "PEGMATE_VLM_TOKEN"


class RetryNesting(str, enum.Enum):
    # every yaw hypothesis is tried for every identification
    NESTED = "nested"
    # yaw retries on the top-ranked hole only, then one attempt per further hole
    FLAT = "flat"


@dataclass(frozen=True)
class PipelineConfig:
    n_id_retries: int = 2
    n_se2_retries: int = 2
    nesting: RetryNesting = RetryNesting.NESTED
    strategy: InputStrategy = InputStrategy.TWO_VIEW
    backend: str = "oracle"
    z_threshold_m: float = Z_THRESHOLD_M
    margin_px: int = CROP_MARGIN_PX
    spiral: SpiralParams = SpiralParams()
    funnel_xy_mm: float = 0.4
    funnel_yaw_deg: float = 2.0
    render: RenderConfig = RenderConfig()
    yaw_flip_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nesting", RetryNesting(self.nesting))
        object.__setattr__(self, "strategy", InputStrategy(self.strategy))
        if int(self.n_id_retries) != self.n_id_retries or self.n_id_retries < 1:
            raise ValidationError("n_id_retries must be an integer >= 1")
        if int(self.n_se2_retries) != self.n_se2_retries or self.n_se2_retries < 1:
            raise ValidationError("n_se2_retries must be an integer >= 1")
        if self.backend not in ("oracle", "remote"):
            raise ValidationError("backend must be 'oracle' or 'remote'")
        if not (0.0 <= self.yaw_flip_rate <= 1.0):
            raise ValidationError("yaw_flip_rate must lie in [0, 1]")

    def attempt_plan(self, n_ranked):
        """(identification rank, yaw rank) pairs in the order they are tried."""
        n_id = min(self.n_id_retries, n_ranked)
        if self.nesting is RetryNesting.NESTED:
            return [(i, j) for i in range(n_id) for j in range(self.n_se2_retries)]
        return [(0, j) for j in range(self.n_se2_retries)] + [(i, 0) for i in range(1, n_id)]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["nesting"] = self.nesting.value
        d["strategy"] = self.strategy.value
        return d


def _derive_seed(*parts) -> int:
    h = hashlib.sha256("\0".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:4], "big")


def _r(x):
    return round(float(x), 9)


# ---------------------------------------------------------------------------
# attempt log


class _TracingBackend(MatcherBackend):
    """Forwards to ``inner`` and remembers the digest and reply of every query."""

    def __init__(self, inner):
        self.inner = inner
        self.returns_logprobs = inner.returns_logprobs
        self.concurrent = False
        self.digests = []
        self.transcript = {}

    def complete(self, bundle):
        d = bundle.digest()
        self.digests.append(d)
        reply = self.inner.complete(bundle)
        self.transcript[d] = reply
        return reply


class AttemptLog:
    """Append-only record of one trial; timings are kept apart from the replayable content."""

    def __init__(self, trial):
        self.trial = trial
        self._records = []
        self.timings = {}
        self.status = "pending"
        self.first_attempt_success = False
        self.success = False
        self.failure_mode = None
        self.first_failure_mode = None
        self.family = None
        self.digests = []
        self.transcript = {}

    @property
    def records(self):
        return tuple(self._records)

    def append(self, stage, **data):
        if self.status != "pending":
            raise ValidationError("attempt log is closed")
        self._records.append({"stage": stage, **data})

    def close(self, status):
        self.status = status

    def attempts(self):
        return [r for r in self._records if r["stage"] == "insert"]

    def to_dict(self, timings=False):
        d = {
            "trial": self.trial,
            "family": self.family,
            "status": self.status,
            "first_attempt_success": self.first_attempt_success,
            "success": self.success,
            "failure_mode": self.failure_mode,
            "first_failure_mode": self.first_failure_mode,
            "records": list(self._records),
            "digests": list(self.digests),
        }
        if timings:
            d["timings_s"] = dict(self.timings)
        return d


def _timed(log, name, fn, *args, **kwargs):
    t = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    finally:
        log.timings[name] = log.timings.get(name, 0.0) + time.perf_counter() - t


def peg_input(scene) -> PegInput:
    peg = scene.meta.get("peg", {})
    shape = Polygon2D(peg["polygon_local_mm"]) if "polygon_local_mm" in peg else None
    return PegInput(scene.peg_views, shape, peg.get("shape", {}).get("family"))


def run_trial(scene, world: SyntheticWorld, config: PipelineConfig, backend, trial="0") -> AttemptLog:
    """Detect, identify, estimate yaw and insert, following ``config.attempt_plan``.

    Errors inside a trial end it as a failure with the cause recorded.
    """
    log = AttemptLog(str(trial))
    log.family = world.peg.family
    tracer = _TracingBackend(backend)
    try:
        _run_trial(scene, world, config, tracer, log)
    except TransportError:
        raise
    except PegmateError as exc:
        log.append("error", cause=f"{type(exc).__name__}: {exc}")
        log.failure_mode = log.failure_mode or "error"
        log.first_failure_mode = log.first_failure_mode or "error"
        log.digests = list(tracer.digests)
        log.close("error")
        log.transcript = tracer.transcript
        return log
    log.digests = list(tracer.digests)
    log.transcript = tracer.transcript
    log.close("success" if log.success else "failure")
    return log


def _run_trial(scene, world, config, backend, log):
    cands = _timed(log, "detect", detect_candidates, scene, config.z_threshold_m, config.margin_px)
    log.append("detect", candidates=[
        {"index": c.index, "centroid_m": [_r(v) for v in c.centroid], "n_points": int(len(c.cloud))}
        for c in cands
    ])
    if not cands:
        raise EmptyDatasetError("no candidate survived the height filter")
    peg = peg_input(scene)
    outcome = _timed(log, "match", match_hole, peg, cands, backend, config.strategy)
    log.append("match", **outcome.to_dict())
    by_index = {c.index: c for c in cands}
    contact = ContactWorld(world, config.funnel_xy_mm, config.funnel_yaw_deg)
    yaws = {}
    first = True
    for id_rank, yaw_rank in config.attempt_plan(len(outcome.ranking)):
        cand = by_index[outcome.ranking[id_rank]]
        if id_rank not in yaws:
            yaws[id_rank] = _estimate(scene, cand, peg, backend, log, f"{log.trial}:{cand.index}")
        est = yaws[id_rank]
        if est is None:
            continue
        pose = se2_estimate(cand, est, yaw_rank)
        res = _timed(log, "insert", simulate_attempt, contact, pose, params=config.spiral)
        log.append("insert", id_rank=id_rank, yaw_rank=yaw_rank, candidate=cand.index,
                   pose={k: _r(v) for k, v in pose.to_dict().items()}, outcome=res.to_dict())
        if first:
            log.first_attempt_success = res.success
            log.first_failure_mode = res.failure_mode.value
            first = False
        log.failure_mode = res.failure_mode.value
        if res.success:
            log.success = True
            return
    if first:
        raise BackendError("no yaw estimate for any identified hole")


def _estimate(scene, cand, peg, backend, log, group):
    try:
        canon = canonicalize(cand.views[DEPTH_VIEW], cand.mask_crops[DEPTH_VIEW])
        ctx = yaw_context_for(cand, peg.shape, group)
        est = _timed(log, "yaw", estimate_yaw, scene.peg_views[DEPTH_VIEW], canon, backend, context=ctx)
    except TransportError:
        raise
    except PegmateError as exc:
        log.append("yaw", candidate=cand.index, error=f"{type(exc).__name__}: {exc}")
        return None
    d = est.to_dict()
    log.append("yaw", candidate=cand.index, theta_yaw=_r(d["theta_yaw"]), theta_rotate=d["theta_rotate"],
               theta=_r(d["theta"]), ranking=d["ranking"])
    return est


# ---------------------------------------------------------------------------
# end to end


@dataclass
class E2EResult:
    config: PipelineConfig
    logs: list
    transcript: dict = field(default_factory=dict)

    @property
    def n_trials(self):
        return len(self.logs)

    @property
    def first_attempt_successes(self):
        return sum(1 for g in self.logs if g.first_attempt_success)

    @property
    def with_retry_successes(self):
        return sum(1 for g in self.logs if g.success)

    def failure_modes(self, first=False):
        counts = {m.value: 0 for m in FailureMode if m is not FailureMode.NONE}
        counts["error"] = 0
        for g in self.logs:
            mode = g.first_failure_mode if first else g.failure_mode
            ok = g.first_attempt_success if first else g.success
            if not ok:
                counts[mode or "error"] = counts.get(mode or "error", 0) + 1
        return counts

    def per_family(self):
        out = {}
        for g in self.logs:
            row = out.setdefault(g.family, {"trials": 0, "first_attempt": 0, "with_retry": 0})
            row["trials"] += 1
            row["first_attempt"] += int(g.first_attempt_success)
            row["with_retry"] += int(g.success)
        return dict(sorted(out.items()))

    def summary(self):
        n = self.n_trials
        return {
            "trials": n,
            "first_attempt_successes": self.first_attempt_successes,
            "with_retry_successes": self.with_retry_successes,
            "first_attempt_rate": _r(self.first_attempt_successes / n) if n else 0.0,
            "with_retry_rate": _r(self.with_retry_successes / n) if n else 0.0,
            "failure_modes_first_attempt": self.failure_modes(first=True),
            "failure_modes_final": self.failure_modes(),
            "per_family": self.per_family(),
        }

    def to_dict(self):
        return {"config": self.config.to_dict(), "summary": self.summary(),
                "trials": [g.to_dict() for g in self.logs]}


def make_e2e_worlds(n_boards=12, n_pegs=5, seed=0, clutter=2, **panel_kwargs):
    """Worlds for ``n_boards`` panels, flattened board by board."""
    worlds = []
    for b in range(n_boards):
        worlds += make_panel(n_pegs, seed=_derive_seed(seed, "board", b), clutter=clutter, **panel_kwargs)
    return worlds


def _board_groups(worlds):
    groups, keys = [], []
    for w in worlds:
        k = _board_key(w)
        if keys and keys[-1] == k:
            groups[-1].append(w)
        else:
            keys.append(k)
            groups.append([w])
    return groups


def run_e2e(worlds, config: PipelineConfig = PipelineConfig(), backend=None) -> E2EResult:
    """Run one trial per world; consecutive worlds on the same board share one render."""
    if isinstance(worlds, SyntheticWorld):
        worlds = [worlds]
    worlds = list(worlds)
    if not worlds:
        raise EmptyDatasetError("run_e2e needs at least one world")
    backend = backend if backend is not None else make_backend(config)
    logs, transcript = [], {}
    t = 0
    for b, group in enumerate(_board_groups(worlds)):
        cfg = dataclasses.replace(config.render, seed=_derive_seed(config.seed, "render", b))
        for world, scene in zip(group, render_panel(group, cfg)):
            log = run_trial(scene, world, config, backend, trial=f"{t:04d}")
            transcript.update(log.transcript)
            logs.append(log)
            t += 1
    return E2EResult(config, logs, dict(sorted(transcript.items())))


# ---------------------------------------------------------------------------
# matching experiments


@dataclass
class ConfusionMatrix:
    """Rows are pegs, columns holes; each cell holds the verdict, probability and rank."""

    peg_names: list
    hole_names: list
    truth: list
    rankings: list
    cells: list  # cells[i][j] = {"verdict", "probability", "rank"} or None when the query failed
    ambiguous: list
    errors: list

    def __post_init__(self):
        n = len(self.peg_names)
        if len(self.hole_names) != n or len(self.cells) != n or any(len(r) != n for r in self.cells):
            raise ValidationError("confusion matrix must be square")
        for r in self.rankings:
            if sorted(r) != list(range(n)):
                raise ValidationError("every row must rank every hole exactly once")

    def __len__(self):
        return len(self.peg_names)

    def top_k(self, k):
        """Rows whose true hole is within the first ``k`` ranks; ambiguous rows never count at k = 1."""
        hits = 0
        for i, r in enumerate(self.rankings):
            if k == 1 and self.ambiguous[i]:
                continue
            hits += int(self.truth[i] in r[:k])
        return hits

    def accuracy(self, ks=(1, 2, 3)):
        return {f"top{k}": self.top_k(k) for k in ks}

    def to_dict(self):
        return {
            "pegs": list(self.peg_names),
            "holes": list(self.hole_names),
            "truth": list(self.truth),
            "rankings": [list(r) for r in self.rankings],
            "cells": self.cells,
            "ambiguous": list(self.ambiguous),
            "errors": self.errors,
            "accuracy": self.accuracy(),
        }

    def to_csv(self):
        """Grid of ``verdict:probability:rank`` with the true hole marked by ``*``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["peg"] + [f"{j}:{h}" for j, h in enumerate(self.hole_names)])
        for i, row in enumerate(self.cells):
            out = [f"{i}:{self.peg_names[i]}"]
            for j, c in enumerate(row):
                mark = "*" if self.truth[i] == j else ""
                out.append(f"{mark}error" if c is None else f"{mark}{c['verdict']}:{c['probability']:.6f}:{c['rank']}")
            w.writerow(out)
        return buf.getvalue()


@dataclass
class MatchingResult:
    strategy: InputStrategy
    confusion: ConfusionMatrix

    @property
    def accuracy(self):
        return self.confusion.accuracy()

    def to_dict(self):
        return {"strategy": self.strategy.value, "n": len(self.confusion), **self.confusion.to_dict()}


def run_matching_experiment(dataset, backend=None, strategy=InputStrategy.TWO_VIEW, *, n_workers=1
                            ) -> MatchingResult:
    """Rank every hole for every peg; backend faults are recorded per cell."""
    strategy = InputStrategy(strategy)
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset has no pegs")
    backend = backend if backend is not None else OracleBackend()
    holes = list(dataset.holes)
    n = len(holes)
    rankings, cells, ambiguous, errors = [], [], [], []
    for peg in dataset.pegs:
        try:
            out = match_hole(peg, holes, backend, strategy, n_workers=n_workers)
        except TransportError as exc:
            rankings.append(list(range(n)))
            cells.append([None] * n)
            ambiguous.append(True)
            errors.append({str(j): f"{type(exc).__name__}: {exc}" for j in range(n)})
            continue
        rank_of = {idx: r + 1 for r, idx in enumerate(out.ranking)}
        resp = dict(out.responses)
        cells.append([
            None if resp.get(j) is None else
            {"verdict": resp[j].verdict.value, "probability": _r(resp[j].probability), "rank": rank_of[j]}
            for j in range(n)
        ])
        rankings.append(list(out.ranking))
        ambiguous.append(bool(out.ambiguous) if strategy is InputStrategy.NO_PROBABILITY else False)
        errors.append({str(k): v for k, v in sorted(out.errors.items())})
    cm = ConfusionMatrix([p.name for p in dataset.pegs], [h.name for h in holes], list(dataset.truth),
                         rankings, cells, ambiguous, errors)
    return MatchingResult(strategy, cm)


@dataclass
class AblationResult:
    rows: list  # one dict per strategy, in the requested order

    def row(self, strategy):
        strategy = InputStrategy(strategy).value
        return next(r for r in self.rows if r["strategy"] == strategy)

    def to_dict(self):
        return {"rows": self.rows}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "n", "top1", "top2", "top3", "error"])
        for r in self.rows:
            w.writerow([r["strategy"], r["n"], r["top1"], r["top2"], r["top3"], r["error"] or ""])
        return buf.getvalue()


def run_ablation(dataset, strategies=tuple(InputStrategy), backend=None, *, n_workers=1) -> AblationResult:
    """One matching experiment per strategy; a failing strategy is recorded and the rest still run."""
    strategies = [InputStrategy(s) for s in strategies]
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset has no pegs")
    rows = []
    for s in strategies:
        try:
            acc = run_matching_experiment(dataset, backend, s, n_workers=n_workers).accuracy
            rows.append({"strategy": s.value, "n": len(dataset), **acc, "error": None})
        except PegmateError as exc:
            rows.append({"strategy": s.value, "n": len(dataset), "top1": None, "top2": None, "top3": None,
                         "error": f"{type(exc).__name__}: {exc}"})
    return AblationResult(rows)


# ---------------------------------------------------------------------------
# backends


def make_backend(config: PipelineConfig = PipelineConfig(), *, url=None, token=None, **kwargs) -> MatcherBackend:
    """Oracle or remote backend; the remote URL and token fall back to the environment."""
    if config.backend == "oracle":
        return OracleBackend(yaw_flip_rate=config.yaw_flip_rate, seed=config.seed)
    url = url or os.environ.get(ENV_URL)
    token = token or os.environ.get(ENV_TOKEN)
    if not url:
        raise ValidationError(f"remote backend needs a URL (vlm.url or {ENV_URL})")
    return RemoteBackend(url, token, **kwargs)


# ---------------------------------------------------------------------------
# reports


def _json_bytes(obj):
    return (json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=True, allow_nan=False) + "\n").encode()


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def bar_chart_svg(title, labels, series, y_max=None, width=640, height=320):
    """Grouped vertical bars; ``series`` maps a legend name to one value per label."""
    names = list(series)
    y_max = y_max or max([1.0] + [float(v) for vals in series.values() for v in vals])
    left, bottom, top = 48, 60, 30
    plot_w, plot_h = width - left - 16, height - bottom - top
    slot = plot_w / max(len(labels), 1)
    bar_w = slot * 0.8 / max(len(names), 1)
    fills = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<text x="{left - 4}" y="{top + 4}" text-anchor="end">{y_max:g}</text>',
        f'<text x="{left - 4}" y="{top + plot_h}" text-anchor="end">0</text>',
    ]
    for i, lab in enumerate(labels):
        for k, name in enumerate(names):
            v = float(series[name][i] or 0.0)
            h = plot_h * v / y_max
            x = left + i * slot + slot * 0.1 + k * bar_w
            out.append(f'<rect x="{x:.2f}" y="{top + plot_h - h:.2f}" width="{bar_w:.2f}" height="{h:.2f}" '
                       f'fill="{fills[k % len(fills)]}"><title>{_esc(name)}: {v:g}</title></rect>')
        out.append(f'<text x="{left + (i + 0.5) * slot:.2f}" y="{top + plot_h + 14}" '
                   f'text-anchor="middle">{_esc(lab)}</text>')
    for k, name in enumerate(names):
        y, x = height - 22, left + k * 130
        out.append(f'<rect x="{x}" y="{y}" width="10" height="10" fill="{fills[k % len(fills)]}"/>')
        out.append(f'<text x="{x + 14}" y="{y + 9}">{_esc(name)}</text>')
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode()


def _report_files(name, result):
    if isinstance(result, MatchingResult):
        acc = result.accuracy
        return {
            f"{name}.json": _json_bytes(result.to_dict()),
            f"{name}_confusion.csv": result.confusion.to_csv().encode(),
            f"{name}_topk.svg": bar_chart_svg(f"{name}: top-k ({result.strategy.value})", list(acc),
                                              {"correct": list(acc.values())}, y_max=len(result.confusion)),
        }
    if isinstance(result, AblationResult):
        labels = [r["strategy"] for r in result.rows]
        series = {k: [r[k] for r in result.rows] for k in ("top1", "top2", "top3")}
        n = max([r["n"] for r in result.rows] + [1])
        return {
            f"{name}.json": _json_bytes(result.to_dict()),
            f"{name}.csv": result.to_csv().encode(),
            f"{name}.svg": bar_chart_svg(f"{name}: accuracy by input strategy", labels, series, y_max=n),
        }
    if isinstance(result, E2EResult):
        s = result.summary()
        fam = s["per_family"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["failure_mode", "first_attempt", "final"])
        for mode in s["failure_modes_final"]:
            w.writerow([mode, s["failure_modes_first_attempt"][mode], s["failure_modes_final"][mode]])
        fbuf = io.StringIO()
        fw = csv.writer(fbuf, lineterminator="\n")
        fw.writerow(["family", "trials", "first_attempt", "with_retry"])
        for k, row in fam.items():
            fw.writerow([k, row["trials"], row["first_attempt"], row["with_retry"]])
        rate = {k: [_r(fam[f][k] / fam[f]["trials"]) for f in fam] for k in ("first_attempt", "with_retry")}
        return {
            f"{name}.json": _json_bytes(result.to_dict()),
            f"{name}_failure_modes.csv": buf.getvalue().encode(),
            f"{name}_families.csv": fbuf.getvalue().encode(),
            f"{name}_families.svg": bar_chart_svg(f"{name}: success rate by peg family", list(fam), rate, y_max=1.0),
        }
    if isinstance(result, dict):
        return {f"{name}.json": _json_bytes(result)}
    raise ValidationError(f"cannot report a {type(result).__name__}")


def emit_report(results: dict, out_dir, inputs=None) -> dict:
    """Write every result under ``out_dir`` plus ``manifest.json`` of sha256 digests.

    ``results`` maps a report name to a matching, ablation or e2e result
    (or a plain JSON-able dict). ``inputs`` maps input names to digests.
    Returns the manifest.
    """
    if not results:
        raise ValidationError("emit_report needs at least one result")
    files = {}
    for name in sorted(results):
        files.update(_report_files(name, results[name]))
    manifest = {
        "files": {k: hashlib.sha256(v).hexdigest() for k, v in sorted(files.items())},
        "inputs": dict(sorted((inputs or {}).items())),
    }
    files["manifest.json"] = _json_bytes(manifest)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for k, v in sorted(files.items()):
            (out / k).write_bytes(v)
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return manifest


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
