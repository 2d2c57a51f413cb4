import base64
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pegmate.errors import (
    ArityMismatchError,
    BadStatusError,
    TransportError,
    UnparseableError,
    ValidationError,
)
from pegmate.matcher import (
    Fidelity,
    HoleMatcher,
    MatchResponse,
    OracleBackend,
    RecordingBackend,
    RemoteBackend,
    ReplayBackend,
    Reply,
    Verdict,
    build_prompt,
    match_hole,
    oracle_answer,
    parse_name_response,
    parse_response,
    rank_candidates,
)
from pegmate.worldgen import ShapeSpec, make_matching_benchmark, make_shape, mating_hole

GOLDEN = (
    "<image1> This is a cross-sectional image of a peg.\n"
    "<image2> This is another image of a peg from a different angle.\n"
    "<image3> This is a cross-sectional image of a hole.\n"
    "<image4> This is another image of a hole from a different angle.\n"
    "Can the peg in images 1 and 2 be perfectly inserted into the hole in images 3 and 4?\n"
    "Please answer with only yes or no."
)

IMG = np.zeros((4, 5), dtype=np.uint8)


@pytest.fixture(scope="module")
def bench():
    return make_matching_benchmark(5, seed=2)


# ---------------------------------------------------------------------------
# prompts


def test_two_view_prompt_is_golden():
    b = build_prompt([IMG, IMG + 1], [IMG + 2, IMG + 3])
    assert b.text.encode() == GOLDEN.encode()
    assert [slot for slot, _ in b.images] == [1, 2, 3, 4]
    kinds = [k for k, _ in b.segments()]
    assert kinds == ["image", "text"] * 4 + ["text"] or kinds[:2] == ["image", "text"]
    assert b.segments()[0] == ("image", b.images[0][1])


@pytest.mark.parametrize("strategy,n", [("two_view", 2), ("cross_sectional_only", 1), ("angled_only", 1),
                                        ("three_view", 3), ("name", 2), ("no_probability", 2)])
def test_every_template_references_each_image_once(strategy, n):
    b = build_prompt([IMG] * n, [IMG] * n, strategy)
    for k in range(1, 2 * n + 1):
        assert b.text.count(f"<image{k}>") == 1
    assert f"<image{2 * n + 1}>" not in b.text


def test_arity_mismatch():
    with pytest.raises(ArityMismatchError):
        build_prompt([IMG], [IMG, IMG])


def test_digest_ignores_context_but_not_images():
    a = build_prompt([IMG, IMG], [IMG, IMG], context={"x": 1})
    b = build_prompt([IMG, IMG], [IMG, IMG], context={"x": 2})
    c = build_prompt([IMG, IMG], [IMG, IMG + 1])
    assert a == b and a.digest() == b.digest()
    assert a.digest() != c.digest()


# ---------------------------------------------------------------------------
# parsing


@pytest.mark.parametrize("text,verdict", [("Yes", "Yes"), ("yes.", "Yes"), (" NO", "No"), ("No, it cannot", "No")])
def test_verdict_from_first_word(text, verdict):
    assert parse_response(text).verdict.value == verdict


@pytest.mark.parametrize("text", ["", "   ", "Maybe", "Y"])
def test_unparseable(text):
    with pytest.raises(UnparseableError):
        parse_response(text)


def test_probability_pools_variants_and_renormalises():
    lp = {"Yes": math.log(0.5), " yes": math.log(0.1), "No": math.log(0.2), "Sure": math.log(0.2)}
    r = parse_response("Yes", lp)
    assert r.fidelity is Fidelity.LOGPROB
    assert r.probability == pytest.approx(0.6 / 0.8)
    raw = parse_response("Yes", lp, renormalize=False)
    assert raw.probability == pytest.approx(0.6)


def test_degraded_without_logprobs():
    for lp in (None, {}, {"No": -0.1}):
        r = parse_response("Yes", lp)
        assert r.fidelity is Fidelity.DEGRADED and r.probability == 1.0


def test_response_validation():
    with pytest.raises(ValidationError):
        MatchResponse("Yes", 0.0, "Yes")
    with pytest.raises(ValidationError):
        MatchResponse("Yes", 0.5, "Yes", Fidelity.DEGRADED)


def test_name_parsing():
    assert parse_name_response("peg: Cross; hole: cross").is_yes
    assert not parse_name_response("peg: cross\nhole: l_shape").is_yes
    with pytest.raises(UnparseableError):
        parse_name_response("a cross")


# ---------------------------------------------------------------------------
# ranking


responses = st.lists(
    st.one_of(st.none(), st.tuples(st.sampled_from(["Yes", "No"]), st.floats(1e-6, 1.0))),
    min_size=1, max_size=12,
)


@given(responses)
def test_ranking_law(items):
    resp = [(i, None if r is None else MatchResponse(r[0], r[1], r[0])) for i, r in enumerate(items)]
    order = rank_candidates(resp)
    assert sorted(order) == list(range(len(items)))
    by = dict(resp)
    group = [0 if by[i] is not None and by[i].is_yes else 1 if by[i] is not None else 2 for i in order]
    assert group == sorted(group)
    for a, b in zip(order, order[1:]):
        ra, rb = by[a], by[b]
        if ra is None or rb is None or ra.verdict != rb.verdict:
            continue
        if ra.is_yes:
            assert (ra.probability, -a) >= (rb.probability, -b)
        else:
            assert (ra.probability, a) <= (rb.probability, b)


def test_ranking_is_input_order_independent():
    resp = [(0, MatchResponse("No", 0.9, "No")), (1, MatchResponse("Yes", 0.7, "Yes")),
            (2, MatchResponse("Yes", 0.7, "Yes")), (3, MatchResponse("No", 0.6, "No")), (4, None)]
    assert rank_candidates(resp) == [1, 2, 3, 0, 4]
    assert rank_candidates(resp[::-1]) == [1, 2, 3, 0, 4]


# ---------------------------------------------------------------------------
# oracle


def test_oracle_prefers_the_mating_hole():
    peg = make_shape(ShapeSpec.make("trapezoid", bottom=16, top=10, height=12))
    own = oracle_answer(peg, mating_hole(peg, 0.5))
    small = oracle_answer(peg, mating_hole(peg, 0.1))
    assert own.is_yes and not small.is_yes
    assert 0.5 < own.probability < 1.0


def test_oracle_matching_on_benchmark(bench):
    backend = OracleBackend()
    for i, peg in enumerate(bench.pegs):
        out = match_hole(peg, bench.holes, backend)
        assert out.selected == bench.truth[i]
        assert out.n_yes == 1 and not out.ambiguous


def test_single_view_oracle_ignores_yaw():
    peg = make_shape(ShapeSpec.make("l_shape", width=14, height=12, thickness=5))
    hole = mating_hole(make_shape(ShapeSpec.make("rectangle", width=14.2, height=12.2)), 0.5)
    assert oracle_answer(peg, hole, strategy="cross_sectional_only").is_yes


def test_no_probability_pins_probabilities(bench):
    out = match_hole(bench.pegs[0], bench.holes, OracleBackend(), "no_probability")
    assert all(r.probability == 1.0 and r.fidelity is Fidelity.DEGRADED for _, r in out.responses)


def test_name_strategy(bench):
    out = match_hole(bench.pegs[0], bench.holes, OracleBackend(), "name")
    fam = bench.pegs[0].name
    assert {i for i, r in out.responses if r.is_yes} == {h.index for h in bench.holes if h.name == fam}


def test_hole_matcher_estimator(bench):
    m = HoleMatcher(strategy="three_view").fit(bench.pegs[1])
    assert m.predict(bench.holes) == bench.truth[1]
    assert m.get_params()["strategy"] == "three_view"
    with pytest.raises(ValidationError):
        HoleMatcher().predict(bench.holes)


def test_failed_candidates_rank_last(bench):
    class Flaky(OracleBackend):
        def complete(self, bundle):
            if bundle.context["hole_name"] == bench.holes[bench.truth[0]].name:
                return Reply("Perhaps")
            return super().complete(bundle)

    out = match_hole(bench.pegs[0], bench.holes, Flaky())
    assert out.ranking[-1] == bench.truth[0] or bench.truth[0] in out.errors
    assert bench.truth[0] in out.errors


def test_record_and_replay(bench):
    rec = RecordingBackend(OracleBackend())
    first = match_hole(bench.pegs[2], bench.holes, rec)
    replay = ReplayBackend(rec.transcript_dict())
    again = match_hole(bench.pegs[2], bench.holes, replay)
    assert again.ranking == first.ranking
    assert [r.probability for _, r in again.responses] == [r.probability for _, r in first.responses]


# ---------------------------------------------------------------------------
# remote backend against a local mock


def test_remote_round_trip(vlm_server, bench):
    vlm_server.verdict, vlm_server.probability = "No", 0.7
    backend = RemoteBackend(vlm_server.url, token="secret", model="m1")
    b = build_prompt([IMG, IMG], [IMG, IMG])
    r = backend.answer(b)
    assert r.verdict is Verdict.NO and r.probability == pytest.approx(0.7, abs=1e-12)
    assert r.fidelity is Fidelity.LOGPROB
    body = vlm_server.requests[-1]
    assert body["model"] == "m1" and body["max_tokens"] == 1
    assert body["logprobs"] is True and body["top_logprobs"] == 5
    (msg,) = body["messages"]
    assert msg["role"] == "user"
    texts = [c["text"] for c in msg["content"] if c["type"] == "text"]
    assert "".join(texts) == GOLDEN.replace("<image1>", "").replace("<image2>", "").replace(
        "<image3>", "").replace("<image4>", "")
    urls = [c["image_url"]["url"] for c in msg["content"] if c["type"] == "image_url"]
    assert len(urls) == 4
    assert base64.b64decode(urls[0].split(",", 1)[1]) == b.images[0][1]
    assert vlm_server.headers[-1]["Authorization"] == "Bearer secret"


def test_remote_degraded_when_logprobs_withheld(vlm_server):
    vlm_server.mode = "no_logprobs"
    r = RemoteBackend(vlm_server.url).answer(build_prompt([IMG, IMG], [IMG, IMG]))
    assert r.fidelity is Fidelity.DEGRADED and r.probability == 1.0 and r.is_yes


def test_remote_retries_then_fails(vlm_server):
    vlm_server.mode = "fail"
    sleeps = []
    backend = RemoteBackend(vlm_server.url, sleep=sleeps.append, backoff_s=0.5)
    with pytest.raises(TransportError):
        backend.answer(build_prompt([IMG, IMG], [IMG, IMG]), index=3)
    assert len(vlm_server.requests) == 3
    assert sleeps == [0.5, 1.0]


def test_remote_client_errors(vlm_server):
    vlm_server.mode = "status400"
    with pytest.raises(BadStatusError) as exc:
        RemoteBackend(vlm_server.url).answer(build_prompt([IMG, IMG], [IMG, IMG]), index=2)
    assert exc.value.status == 400 and exc.value.index == 2
    assert len(vlm_server.requests) == 1
    vlm_server.mode = "bad_json"
    with pytest.raises(UnparseableError):
        RemoteBackend(vlm_server.url).answer(build_prompt([IMG, IMG], [IMG, IMG]))


def test_all_transport_failures_abort_matching(vlm_server, bench):
    vlm_server.mode = "fail"
    backend = RemoteBackend(vlm_server.url, sleep=lambda s: None)
    with pytest.raises(TransportError):
        match_hole(bench.pegs[0], bench.holes[:2], backend)


def test_name_strategy_payload(vlm_server):
    RemoteBackend(vlm_server.url).complete(build_prompt([IMG, IMG], [IMG, IMG], "name"))
    body = vlm_server.requests[-1]
    assert body["max_tokens"] > 1 and "logprobs" not in body
