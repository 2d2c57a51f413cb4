"""Peg/hole matching through a yes/no vision-language query per candidate.

Each candidate hole is shown to a backend together with the peg; the
Yes/No answer and the probability of its first token rank the candidates.
Backends are pluggable: a deterministic geometric oracle, a remote
chat-completions endpoint, or a replay of a recorded transcript.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import io
import json
import math
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import httpx
import numpy as np
from PIL import Image
from scipy.special import log_expit
from sklearn.base import BaseEstimator

from .errors import (
    ArityMismatchError,
    BackendError,
    BadStatusError,
    InvalidPolygonError,
    TransportError,
    UnparseableError,
    ValidationError,
)
from .geometry import Polygon2D, aligned_yaw_grid, convex_hull, insertability, min_area_rect

ORACLE_CLEARANCE_MM = 0.2
ORACLE_TEMPERATURE_MM = 0.25
YAW_WINDOW_DEG = 3.0
# probabilities are kept strictly inside (0, 1)
_P_FLOOR = 1e-12


class Verdict(str, enum.Enum):
    YES = "Yes"
    NO = "No"


class Fidelity(str, enum.Enum):
    LOGPROB = "logprob"
    DEGRADED = "degraded"


class InputStrategy(str, enum.Enum):
    TWO_VIEW = "two_view"
    CROSS_SECTIONAL_ONLY = "cross_sectional_only"
    ANGLED_ONLY = "angled_only"
    THREE_VIEW = "three_view"
    NAME = "name"
    NO_PROBABILITY = "no_probability"


ALL_STRATEGIES = tuple(InputStrategy)

# views fed to the prompt, per strategy, in slot order
STRATEGY_VIEWS = {
    InputStrategy.TWO_VIEW: ("top", "angled"),
    InputStrategy.CROSS_SECTIONAL_ONLY: ("top",),
    InputStrategy.ANGLED_ONLY: ("angled",),
    InputStrategy.THREE_VIEW: ("top", "angled", "side"),
    InputStrategy.NAME: ("top", "angled"),
    InputStrategy.NO_PROBABILITY: ("top", "angled"),
}

_TWO_VIEW_TEMPLATE = (
    "<image1> This is a cross-sectional image of a peg.\n"
    "<image2> This is another image of a peg from a different angle.\n"
    "<image3> This is a cross-sectional image of a hole.\n"
    "<image4> This is another image of a hole from a different angle.\n"
    "Can the peg in images 1 and 2 be perfectly inserted into the hole in images 3 and 4?\n"
    "Please answer with only yes or no."
)

_CROSS_TEMPLATE = (
    "<image1> This is a cross-sectional image of a peg.\n"
    "<image2> This is a cross-sectional image of a hole.\n"
    "Can the peg in image 1 be perfectly inserted into the hole in image 2?\n"
    "Please answer with only yes or no."
)

_ANGLED_TEMPLATE = (
    "<image1> This is an angled image of a peg.\n"
    "<image2> This is an angled image of a hole.\n"
    "Can the peg in image 1 be perfectly inserted into the hole in image 2?\n"
    "Please answer with only yes or no."
)

_THREE_VIEW_TEMPLATE = (
    "<image1> This is a cross-sectional image of a peg.\n"
    "<image2> This is another image of a peg from a different angle.\n"
    "<image3> This is another image of a peg from a different angle.\n"
    "<image4> This is a cross-sectional image of a hole.\n"
    "<image5> This is another image of a hole from a different angle.\n"
    "<image6> This is another image of a hole from a different angle.\n"
    "Can the peg in images 1, 2 and 3 be perfectly inserted into the hole in images 4, 5 and 6?\n"
    "Please answer with only yes or no."
)

_NAME_TEMPLATE = (
    "<image1> This is a cross-sectional image of a peg.\n"
    "<image2> This is another image of a peg from a different angle.\n"
    "<image3> This is a cross-sectional image of a hole.\n"
    "<image4> This is another image of a hole from a different angle.\n"
    "What are the names of the peg in images 1 and 2 and of the hole in images 3 and 4?\n"
    'Answer in the form "peg: <name>; hole: <name>".'
)

TEMPLATES = {
    InputStrategy.TWO_VIEW: _TWO_VIEW_TEMPLATE,
    InputStrategy.NO_PROBABILITY: _TWO_VIEW_TEMPLATE,
    InputStrategy.CROSS_SECTIONAL_ONLY: _CROSS_TEMPLATE,
    InputStrategy.ANGLED_ONLY: _ANGLED_TEMPLATE,
    InputStrategy.THREE_VIEW: _THREE_VIEW_TEMPLATE,
    InputStrategy.NAME: _NAME_TEMPLATE,
}

_IMAGE_TOKEN = re.compile(r"<image(\d+)>")


@dataclass(frozen=True)
class MatchResponse:
    verdict: Verdict
    probability: float
    raw_text: str
    fidelity: Fidelity = Fidelity.LOGPROB

    def __post_init__(self):
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))
        if not (0.0 < self.probability <= 1.0):
            raise ValidationError(f"probability {self.probability} outside (0, 1]")
        if self.fidelity is Fidelity.DEGRADED and self.probability != 1.0:
            raise ValidationError("degraded responses carry probability 1.0")

    @property
    def is_yes(self):
        return self.verdict is Verdict.YES

    def to_dict(self):
        return {"verdict": self.verdict.value, "probability": self.probability,
                "raw_text": self.raw_text, "fidelity": self.fidelity.value}

    @classmethod
    def from_dict(cls, d):
        return cls(d["verdict"], d["probability"], d["raw_text"], d["fidelity"])


@dataclass(frozen=True)
class Reply:
    """Raw backend output: generated text and first-token log-probabilities."""

    text: str
    logprobs: dict | None = None

    def to_dict(self):
        return {"text": self.text, "logprobs": self.logprobs}

    @classmethod
    def from_dict(cls, d):
        return cls(d["text"], d.get("logprobs"))


@dataclass(frozen=True)
class PromptBundle:
    """Prompt text plus PNG-encoded images in slot order.

    ``context`` carries simulation-side ground truth (shapes, names) that
    only the oracle backend reads; it never goes over the wire and is
    excluded from equality and the digest.
    """

    text: str
    images: tuple
    strategy: InputStrategy
    task: str = "match"
    context: dict = field(default_factory=dict, compare=False, repr=False)

    def digest(self):
        h = hashlib.sha256()
        h.update(self.strategy.value.encode())
        h.update(b"\0" + self.task.encode() + b"\0")
        h.update(self.text.encode())
        for slot, data in self.images:
            h.update(f"\0{slot}\0{len(data)}\0".encode())
            h.update(data)
        return h.hexdigest()

    def segments(self):
        """Interleaved ("text", str) / ("image", bytes) parts in prompt order."""
        slots = dict(self.images)
        out, pos = [], 0
        for m in _IMAGE_TOKEN.finditer(self.text):
            if m.start() > pos:
                out.append(("text", self.text[pos:m.start()]))
            out.append(("image", slots[int(m.group(1))]))
            pos = m.end()
        if pos < len(self.text):
            out.append(("text", self.text[pos:]))
        return out


def encode_png(image) -> bytes:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _as_bytes(img):
    return img if isinstance(img, (bytes, bytearray)) else encode_png(img)


def build_prompt(peg_images, hole_images, strategy=InputStrategy.TWO_VIEW, *, task="match", context=None):
    strategy = InputStrategy(strategy)
    need = len(STRATEGY_VIEWS[strategy])
    if len(peg_images) != need or len(hole_images) != need:
        raise ArityMismatchError(
            f"{strategy.value} needs {need} peg and {need} hole images, "
            f"got {len(peg_images)} and {len(hole_images)}"
        )
    imgs = [_as_bytes(i) for i in list(peg_images) + list(hole_images)]
    return PromptBundle(TEMPLATES[strategy], tuple(enumerate(imgs, start=1)), strategy, task, dict(context or {}))


# ---------------------------------------------------------------------------
# response parsing and ranking


def _norm_token(tok):
    return str(tok).strip().strip(string.punctuation).strip().lower()


def parse_response(raw_text, logprobs=None, *, renormalize=True) -> MatchResponse:
    """Verdict from the first word; probability from first-token log-probabilities.

    ``logprobs`` maps candidate first tokens to log-probabilities. Masses of
    case/punctuation variants are pooled. With both yes and no mass present
    and ``renormalize`` set, the probability is renormalised over the pair.
    """
    if not raw_text or not raw_text.strip():
        raise UnparseableError("empty response")
    word = _norm_token(raw_text.split()[0])
    if word not in ("yes", "no"):
        raise UnparseableError(f"first word {raw_text.split()[0]!r} is neither yes nor no")
    verdict = Verdict.YES if word == "yes" else Verdict.NO
    if not logprobs:
        return MatchResponse(verdict, 1.0, raw_text, Fidelity.DEGRADED)
    mass = {"yes": 0.0, "no": 0.0}
    for tok, lp in logprobs.items():
        key = _norm_token(tok)
        if key in mass and lp is not None and math.isfinite(lp):
            mass[key] += math.exp(lp)
    own = mass[word]
    if own <= 0.0:
        return MatchResponse(verdict, 1.0, raw_text, Fidelity.DEGRADED)
    other = mass["no" if word == "yes" else "yes"]
    p = own / (own + other) if (renormalize and other > 0) else own
    return MatchResponse(verdict, min(p, 1.0), raw_text, Fidelity.LOGPROB)


_NAME_RE = re.compile(r"peg\s*:\s*(?P<peg>[^;\n]+?)\s*[;\n]\s*hole\s*:\s*(?P<hole>[^;\n]+)", re.I)


def parse_name_response(raw_text) -> MatchResponse:
    """Yes when the predicted peg and hole names agree (case-insensitive, exact)."""
    m = _NAME_RE.search(raw_text or "")
    if not m:
        raise UnparseableError(f"no 'peg: ...; hole: ...' pair in {raw_text!r}")
    same = _norm_token(m.group("peg")) == _norm_token(m.group("hole"))
    return MatchResponse(Verdict.YES if same else Verdict.NO, 1.0, raw_text, Fidelity.DEGRADED)


def format_response(response: MatchResponse) -> str:
    return response.verdict.value


def _rank_key(item):
    idx, resp = item
    if resp is None:
        return (2, 0.0, idx)
    if resp.is_yes:
        return (0, -resp.probability, idx)
    return (1, resp.probability, idx)


def rank_candidates(responses) -> list:
    """Yes answers by falling probability, then No answers by rising probability.

    ``responses`` is a sequence of (index, MatchResponse or None); a None
    response (failed query) ranks last. Remaining ties go to the smaller index.
    """
    return [idx for idx, _ in sorted(responses, key=_rank_key)]


# ---------------------------------------------------------------------------
# oracle


def silhouette_margin(peg: Polygon2D, hole: Polygon2D, clearance_mm, foreshorten=1.0):
    """Yaw-free bounding-rectangle comparison used for single-view strategies."""
    rp = min_area_rect(convex_hull(peg.vertices))
    rh = min_area_rect(convex_hull(hole.vertices))
    long_slack = rh.half_extents[0] - rp.half_extents[0]
    short_slack = (rh.half_extents[1] - rp.half_extents[1]) * foreshorten
    return min(long_slack, short_slack) - clearance_mm


def oracle_margin(peg, hole, clearance_mm=ORACLE_CLEARANCE_MM, strategy=InputStrategy.TWO_VIEW, *, yaws=None):
    strategy = InputStrategy(strategy)
    if strategy is InputStrategy.CROSS_SECTIONAL_ONLY:
        return silhouette_margin(peg, hole, clearance_mm)
    if strategy is InputStrategy.ANGLED_ONLY:
        return silhouette_margin(peg, hole, clearance_mm, math.cos(math.radians(30.0)))
    return insertability(peg, hole, clearance_mm, yaws=yaws).margin_mm


def _oracle_reply(margin, temperature):
    m = round(float(margin), 9)  # equal geometry must give bit-equal probabilities
    lp_yes = float(log_expit(m / temperature))
    lp_no = float(log_expit(-m / temperature))
    text = Verdict.YES.value if m >= -1e-9 else Verdict.NO.value
    return Reply(text, {"Yes": lp_yes, "No": lp_no})


def oracle_answer(peg: Polygon2D, hole: Polygon2D, clearance_mm=ORACLE_CLEARANCE_MM,
                  strategy=InputStrategy.TWO_VIEW, *, yaws=None,
                  temperature_mm=ORACLE_TEMPERATURE_MM) -> MatchResponse:
    """Geometric stand-in for the model: Yes iff the peg fits; p = logistic(margin / T)."""
    if not isinstance(peg, Polygon2D) or not isinstance(hole, Polygon2D):
        raise InvalidPolygonError("oracle needs Polygon2D inputs")
    reply = _oracle_reply(oracle_margin(peg, hole, clearance_mm, strategy, yaws=yaws), temperature_mm)
    resp = parse_response(reply.text, reply.logprobs)
    p = min(max(resp.probability, _P_FLOOR), 1.0 - _P_FLOOR)
    return MatchResponse(resp.verdict, p, resp.raw_text, resp.fidelity)


# ---------------------------------------------------------------------------
# backends


class MatcherBackend:
    """Interface: ``complete(bundle)`` returns a :class:`Reply`."""

    returns_logprobs = False
    concurrent = False

    def complete(self, bundle: PromptBundle) -> Reply:
        raise NotImplementedError

    def answer(self, bundle: PromptBundle, index=None) -> MatchResponse:
        try:
            reply = self.complete(bundle)
            if bundle.strategy is InputStrategy.NAME:
                return parse_name_response(reply.text)
            return parse_response(reply.text, reply.logprobs)
        except BackendError as exc:
            if exc.index is None and index is not None:
                exc.index = index
                exc.args = (f"candidate {index}: {exc.args[0] if exc.args else ''}",)
            raise


def _unit_hash(*parts):
    h = hashlib.sha256("\0".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2.0 ** 64


class OracleBackend(MatcherBackend):
    """Deterministic geometric backend reading ground-truth shapes from the bundle context.

    Match queries run the full insertability search. Yaw queries restrict
    the yaw search to a small window around the displayed orientation.
    ``yaw_flip_rate`` makes the oracle misperceive a fraction of holes with
    a non-square bounding rectangle as rotated by 180 deg, keyed on the
    context ``group`` so every rotation of one estimate sees the same flip.
    """

    returns_logprobs = True
    concurrent = True

    def __init__(self, clearance_mm=ORACLE_CLEARANCE_MM, temperature_mm=ORACLE_TEMPERATURE_MM,
                 yaw_window_deg=YAW_WINDOW_DEG, yaw_flip_rate=0.0, seed=0):
        if clearance_mm < 0 or temperature_mm <= 0:
            raise ValidationError("clearance must be >= 0 and temperature > 0")
        if not (0.0 <= yaw_flip_rate <= 1.0):
            raise ValidationError("yaw_flip_rate must lie in [0, 1]")
        self.clearance_mm = clearance_mm
        self.temperature_mm = temperature_mm
        self.yaw_window_deg = yaw_window_deg
        self.yaw_flip_rate = yaw_flip_rate
        self.seed = seed

    def flips(self, group, hole: Polygon2D):
        if self.yaw_flip_rate <= 0 or group is None:
            return False
        rect = min_area_rect(convex_hull(hole.vertices))
        if abs(rect.half_extents[0] - rect.half_extents[1]) < 1e-6:
            return False
        return _unit_hash(self.seed, group) < self.yaw_flip_rate

    def complete(self, bundle):
        ctx = bundle.context
        if bundle.strategy is InputStrategy.NAME:
            if "peg_name" not in ctx or "hole_name" not in ctx:
                raise ValidationError("oracle name queries need peg_name and hole_name in the context")
            return Reply(f"peg: {ctx['peg_name']}; hole: {ctx['hole_name']}")
        peg, hole = ctx.get("peg_shape"), ctx.get("hole_shape")
        if peg is None or hole is None:
            raise ValidationError("oracle queries need peg_shape and hole_shape in the context")
        if bundle.task == "yaw":
            # the hole view is already turned; only a small yaw window may be searched
            if self.flips(ctx.get("group"), hole):
                hole = hole.rotated(180.0, about=tuple(hole.centroid))
            yaws = aligned_yaw_grid(self.yaw_window_deg)
            margin = insertability(peg, hole, self.clearance_mm, yaws=yaws).margin_mm
        else:
            margin = oracle_margin(peg, hole, self.clearance_mm, bundle.strategy)
        return _oracle_reply(margin, self.temperature_mm)


class RemoteBackend(MatcherBackend):
    """Chat-completions client: one POST per prompt, retried on transport faults."""

    returns_logprobs = True
    concurrent = True

    def __init__(self, url, token=None, model="llava-onevision-qwen2-7b-ov", timeout_s=60.0,
                 attempts=3, backoff_s=0.5, top_logprobs=5, client=None, sleep=time.sleep):
        if not url:
            raise ValidationError("remote backend needs an endpoint URL")
        if attempts < 1:
            raise ValidationError("attempts must be >= 1")
        self.url = url
        self.token = token
        self.model = model
        self.timeout_s = timeout_s
        self.attempts = attempts
        self.backoff_s = backoff_s
        self.top_logprobs = top_logprobs
        self._client = client
        self._sleep = sleep

    def request_payload(self, bundle: PromptBundle) -> dict:
        content = []
        for kind, value in bundle.segments():
            if kind == "text":
                content.append({"type": "text", "text": value})
            else:
                b64 = base64.b64encode(value).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}})
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        }
        if bundle.strategy is InputStrategy.NAME:
            body["max_tokens"] = 32
        else:
            body["max_tokens"] = 1
            body["logprobs"] = True
            body["top_logprobs"] = self.top_logprobs
        return body

    @staticmethod
    def reply_from_payload(data) -> Reply:
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError):
            raise UnparseableError("response has no choices") from None
        msg = choice.get("message") or {}
        text = msg.get("content") if isinstance(msg, dict) else None
        if text is None:
            text = choice.get("text")
        if not isinstance(text, str):
            raise UnparseableError("response has no text")
        lp = choice.get("logprobs")
        table = None
        if isinstance(lp, dict):
            if lp.get("content"):
                first = lp["content"][0]
                table = {alt["token"]: alt["logprob"] for alt in first.get("top_logprobs") or []}
                if "token" in first and first.get("logprob") is not None:
                    table.setdefault(first["token"], first["logprob"])
            elif lp.get("top_logprobs"):  # legacy completions layout
                table = dict(lp["top_logprobs"][0])
        return Reply(text, table or None)

    def _post(self, client, body):
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        return client.post(self.url, json=body, headers=headers, timeout=self.timeout_s)

    def complete(self, bundle):
        body = self.request_payload(bundle)
        client = self._client or httpx.Client()
        try:
            last = None
            for attempt in range(self.attempts):
                if attempt:
                    self._sleep(self.backoff_s * 2 ** (attempt - 1))
                try:
                    resp = self._post(client, body)
                except httpx.HTTPError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    continue
                if resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                    continue
                if resp.status_code >= 400:
                    raise BadStatusError(resp.status_code, resp.text[:200])
                try:
                    data = resp.json()
                except (json.JSONDecodeError, ValueError):
                    raise UnparseableError("response body is not JSON") from None
                return self.reply_from_payload(data)
            raise TransportError(f"gave up after {self.attempts} attempts ({last})")
        finally:
            if self._client is None:
                client.close()


class ReplayBackend(MatcherBackend):
    """Serves replies recorded in a transcript keyed by bundle digest."""

    returns_logprobs = True
    concurrent = True

    def __init__(self, transcript):
        self.transcript = {k: (v if isinstance(v, Reply) else Reply.from_dict(v)) for k, v in transcript.items()}

    def complete(self, bundle):
        try:
            return self.transcript[bundle.digest()]
        except KeyError:
            raise BackendError(f"no recorded reply for bundle {bundle.digest()[:12]}") from None


class RecordingBackend(MatcherBackend):
    """Wraps a backend and records every reply by bundle digest."""

    def __init__(self, inner: MatcherBackend):
        self.inner = inner
        self.transcript = {}
        self.returns_logprobs = inner.returns_logprobs
        self.concurrent = False

    def complete(self, bundle):
        reply = self.inner.complete(bundle)
        self.transcript[bundle.digest()] = reply
        return reply

    def transcript_dict(self):
        return {k: v.to_dict() for k, v in sorted(self.transcript.items())}


# ---------------------------------------------------------------------------
# matching


@dataclass
class PegInput:
    images: dict
    shape: Polygon2D | None = None
    name: str | None = None


@dataclass
class MatchOutcome:
    ranking: list
    responses: list  # (index, MatchResponse or None) in candidate order
    strategy: InputStrategy
    errors: dict = field(default_factory=dict)
    ambiguous: bool = False
    digests: dict = field(default_factory=dict)

    @property
    def selected(self):
        return self.ranking[0]

    @property
    def n_yes(self):
        return sum(1 for _, r in self.responses if r is not None and r.is_yes)

    def to_dict(self):
        return {
            "strategy": self.strategy.value,
            "ranking": list(self.ranking),
            "responses": [{"index": i, "response": None if r is None else r.to_dict()} for i, r in self.responses],
            "errors": {str(k): v for k, v in sorted(self.errors.items())},
            "ambiguous": self.ambiguous,
            "digests": {str(k): v for k, v in sorted(self.digests.items())},
        }


def _views(images, strategy, who):
    names = STRATEGY_VIEWS[strategy]
    missing = [n for n in names if n not in images]
    if missing:
        raise ArityMismatchError(f"{who} lacks views {missing} required by {strategy.value}")
    return [images[n] for n in names]


def bundle_for(peg, candidate, strategy=InputStrategy.TWO_VIEW):
    strategy = InputStrategy(strategy)
    ctx = {
        "peg_shape": getattr(peg, "shape", None),
        "hole_shape": getattr(candidate, "shape", None),
        "peg_name": getattr(peg, "name", None),
        "hole_name": getattr(candidate, "name", None),
    }
    return build_prompt(_views(peg.images, strategy, "peg"), _views(candidate.images, strategy, "candidate"),
                        strategy, context=ctx)


def match_hole(peg, candidates, backend: MatcherBackend, strategy=InputStrategy.TWO_VIEW,
               *, n_workers=1) -> MatchOutcome:
    """Query ``backend`` for every candidate and rank the answers.

    A candidate whose query fails is ranked last and its error recorded.
    ``no_probability`` discards the probabilities and flags the outcome as
    ambiguous unless exactly one candidate received a Yes.
    """
    strategy = InputStrategy(strategy)
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("match_hole needs at least one candidate")
    bundles = [(c.index, bundle_for(peg, c, strategy)) for c in candidates]

    def ask(item):
        idx, b = item
        try:
            return idx, backend.answer(b, idx), None
        except BackendError as exc:
            return idx, None, exc

    if n_workers > 1 and getattr(backend, "concurrent", False):
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(ask, bundles))
    else:
        results = [ask(b) for b in bundles]
    transport = [e for _, _, e in results if isinstance(e, TransportError)]
    if transport and len(transport) == len(results):
        raise transport[0]
    responses = [(i, r) for i, r, _ in results]
    errors = {i: f"{type(e).__name__}: {e}" for i, _, e in results if e is not None}
    if strategy is InputStrategy.NO_PROBABILITY:
        responses = [(i, None if r is None else MatchResponse(r.verdict, 1.0, r.raw_text, Fidelity.DEGRADED))
                     for i, r in responses]
    n_yes = sum(1 for _, r in responses if r is not None and r.is_yes)
    return MatchOutcome(
        ranking=rank_candidates(responses),
        responses=responses,
        strategy=strategy,
        errors=errors,
        ambiguous=n_yes != 1,
        digests={i: b.digest() for i, b in bundles},
    )


class HoleMatcher(BaseEstimator):
    """Estimator wrapper: ``fit(peg)`` then ``predict(candidates)`` returns the selected index."""

    def __init__(self, backend=None, strategy="two_view", n_workers=1):
        self.backend = backend
        self.strategy = strategy
        self.n_workers = n_workers

    def fit(self, peg, y=None):
        self.strategy_ = InputStrategy(self.strategy)
        _views(peg.images, self.strategy_, "peg")
        self.backend_ = self.backend if self.backend is not None else OracleBackend()
        self.peg_ = peg
        return self

    def rank(self, candidates) -> MatchOutcome:
        if not hasattr(self, "peg_"):
            raise ValidationError("HoleMatcher is not fitted")
        return match_hole(self.peg_, candidates, self.backend_, self.strategy_, n_workers=self.n_workers)

    def predict(self, candidates):
        return self.rank(candidates).selected
