import pytest

from semrec.gateway import (ChatRequest, Gateway, MalformedOutput, PromptTooLong,
                            ProviderConfig, ProviderUnavailable, UnknownStage,
                            candidate_ids_in_prompt, complete, complete_structured,
                            mock_complete)

MOCK = ProviderConfig(kind="mock", seed=1)


def req(text, tag="rerank_list", system="sys"):
    return ChatRequest(system_prompt=system, turns=[("user", text)], tag=tag)


PROFILE = """## Overview
Loves slow-burn space stories.

## Attributes
- scifi
- android
- colony

## Description
Prefers puzzles over action.

## Dislikes
- slapstick
"""


def candidate_block(ident, attrs):
    bullets = "\n".join(f"- {a}" for a in attrs)
    return (f"[candidate {ident}]\n## Overview\nx\n\n## Attributes\n{bullets}\n\n"
            f"## Description\nx\n\n## Dislikes\n\n[/candidate {ident}]")


def rerank_prompt(cands: dict[int, list[str]], tag_profile=PROFILE):
    ids = ", ".join(str(i) for i in cands)
    blocks = "\n".join(candidate_block(i, attrs) for i, attrs in cands.items())
    return (f"[viewer profile]\n{tag_profile}\n[/viewer profile]\n\n"
            f"candidates: {ids}\n{blocks}")


class TestComplete:
    def test_mock_determinism(self):
        r = req(rerank_prompt({1: ["scifi"], 2: ["slapstick"]}))
        a = complete(r, MOCK)
        b = complete(r, MOCK)
        assert a.text == b.text

    def test_prompt_too_long_nothing_sent(self):
        sent = []

        def transport(url, payload, headers):
            sent.append(payload)
            return {}

        config = ProviderConfig(kind="remote", endpoint="http://x", max_prompt_chars=10)
        with pytest.raises(PromptTooLong):
            complete(req("a" * 50), config, transport=transport)
        assert sent == []

    def test_remote_retries_then_success(self):
        calls = []

        def transport(url, payload, headers):
            calls.append(1)
            if len(calls) < 3:
                raise ConnectionError("flaky")
            return {"choices": [{"message": {"content": "hello"}}]}

        config = ProviderConfig(kind="remote", endpoint="http://x", max_retries=3)
        resp = complete(req("hi"), config, transport=transport, sleep=lambda _t: None)
        assert resp.text == "hello"
        assert len(calls) == 3

    def test_remote_exhausts_retries(self):
        def transport(url, payload, headers):
            raise ConnectionError("down")

        config = ProviderConfig(kind="remote", endpoint="http://x", max_retries=2)
        with pytest.raises(ProviderUnavailable):
            complete(req("hi"), config, transport=transport, sleep=lambda _t: None)

    def test_api_key_not_in_error(self, monkeypatch):
        monkeypatch.setenv("TEST_SECRET_KEY", "hunter2-secret")

        def transport(url, payload, headers):
            assert headers["Authorization"] == "Bearer hunter2-secret"
            raise ConnectionError("down")

        config = ProviderConfig(kind="remote", endpoint="http://x", max_retries=1,
                                api_key_env="TEST_SECRET_KEY")
        with pytest.raises(ProviderUnavailable) as err:
            complete(req("hi"), config, transport=transport, sleep=lambda _t: None)
        assert "hunter2" not in str(err.value)

    def test_turn_alternation_enforced(self):
        bad = ChatRequest(system_prompt="s", turns=[("assistant", "x")], tag="explain")
        with pytest.raises(Exception):
            complete(bad, MOCK)

    def test_unknown_stage(self):
        with pytest.raises(UnknownStage):
            mock_complete(req("x", tag="nonsense_stage"), seed=0)


class TestCandidateExtraction:
    def test_extracts_last_candidates_line(self):
        r = ChatRequest(system_prompt="", turns=[
            ("user", "candidates: 1, 2, 3\nstuff"),
            ("assistant", "bad"),
            ("user", "your reply was invalid"),
        ], tag="rerank_list")
        assert candidate_ids_in_prompt(r) == [1, 2, 3]

    def test_no_candidates_line(self):
        assert candidate_ids_in_prompt(req("no ids here")) == []


class TestStructured:
    def scripted(self, replies):
        replies = list(replies)

        def transport(url, payload, headers):
            return {"choices": [{"message": {"content": replies.pop(0)}}]}

        return ProviderConfig(kind="remote", endpoint="http://x", max_retries=3), transport

    def test_well_formed_ranked_list(self):
        config, transport = self.scripted(["```[3,1,2]```"])
        out = complete_structured(req("candidates: 1, 2, 3"), "ranked_id_list", config,
                                  transport=transport, sleep=lambda _t: None)
        assert out == [3, 1, 2]

    def test_repair_turn_then_accept(self):
        config, transport = self.scripted(["```[9,1,2]```", "```[2,1,3]```"])
        out = complete_structured(req("candidates: 1, 2, 3"), "ranked_id_list", config,
                                  transport=transport, sleep=lambda _t: None)
        assert out == [2, 1, 3]

    def test_three_invalid_gives_malformed(self):
        config, transport = self.scripted(["junk", "```[1]```", "```{\"a\": 1}```"])
        with pytest.raises(MalformedOutput) as err:
            complete_structured(req("candidates: 1, 2, 3"), "ranked_id_list", config,
                                transport=transport, sleep=lambda _t: None)
        assert err.value.raw

    def test_id_score_list_validation(self):
        config, transport = self.scripted(['```{"1": 70, "2": 101}```',
                                           '```{"1": 70, "2": 90}```'])
        out = complete_structured(req("candidates: 1, 2"), "id_score_list", config,
                                  transport=transport, sleep=lambda _t: None)
        assert out == {1: 70, 2: 90}

    def test_pair_choice_must_be_candidate(self):
        config, transport = self.scripted(["```9```", "```7```"])
        out = complete_structured(req("candidates: 3, 7"), "pair_choice", config,
                                  transport=transport, sleep=lambda _t: None)
        assert out == 7

    def test_profile_doc_requires_sections_in_order(self):
        good = "```\n## Overview\nx\n\n## Attributes\n\n## Description\n\n## Dislikes\n```"
        config, transport = self.scripted(["```## Dislikes only```", good])
        out = complete_structured(req("write profile", tag="profile_item"), "profile_doc",
                                  config, transport=transport, sleep=lambda _t: None)
        assert "## Overview" in out

    def test_explanation_map(self):
        config, transport = self.scripted(
            ['```{"4": {"text": "shares scifi", "tags": ["scifi"]}}```'])
        out = complete_structured(req("candidates: 4"), "explanation_map", config,
                                  transport=transport, sleep=lambda _t: None)
        assert out[4]["tags"] == ["scifi"]


class TestMockHeuristics:
    def test_overlap_orders_ranked_list(self):
        # user attrs {scifi, android, colony}; A shares 2, B shares 0
        prompt = rerank_prompt({4: ["scifi", "android", "heist"], 9: ["slapstick2", "opera"]})
        resp = mock_complete(req(prompt, tag="rerank_list"), seed=0)
        assert "[4, 9]" in resp.text

    def test_tie_breaks_by_lower_id(self):
        prompt = rerank_prompt({8: ["scifi"], 2: ["android"]})
        resp = mock_complete(req(prompt, tag="rerank_list"), seed=0)
        assert "[2, 8]" in resp.text

    def test_mock_scores_match_hand_jaccard(self):
        # user {scifi, android, colony}; item {scifi, android, heist}:
        # shared 2, union 4 -> 50; dislike overlap 0
        prompt = rerank_prompt({4: ["scifi", "android", "heist"]})
        out = complete_structured(req(prompt, tag="rerank_score"), "id_score_list", MOCK)
        assert out == {4: 50}

    def test_dislikes_subtract(self):
        # item {scifi, slapstick}: shared 1, dislike-shared 1, union 4 -> 0
        prompt = rerank_prompt({4: ["scifi", "slapstick"]})
        out = complete_structured(req(prompt, tag="rerank_score"), "id_score_list", MOCK)
        assert out == {4: 0}

    def test_pair_choice_prefers_higher_overlap(self):
        prompt = rerank_prompt({4: ["scifi", "android"], 9: ["opera"]})
        out = complete_structured(req(prompt, tag="rerank_pair"), "pair_choice", MOCK)
        assert out == 4

    def test_explain_names_top_shared_token(self):
        prompt = rerank_prompt({4: ["scifi", "android"]})
        out = complete_structured(req(prompt, tag="explain"), "explanation_map", MOCK)
        # alphabetically first shared tag
        assert out[4]["tags"] == ["android"]
        assert "android" in out[4]["text"]

    def test_gateway_wrapper(self, mock_gateway):
        prompt = rerank_prompt({4: ["scifi"]})
        out = mock_gateway.complete_structured(req(prompt, tag="rerank_list"),
                                               "ranked_id_list")
        assert out == [4]
