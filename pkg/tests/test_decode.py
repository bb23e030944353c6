"""Greedy and beam decoding, WER and alignment reports."""

import itertools
import json

import numpy as np
import pytest

from cslr.decode import (alignment_report, beam_decode, collapse, corpus_summary, eval_record,
                         greedy_decode, wer)

from oracles import best_labelling, edit_distance_exhaustive, edit_scripts, label_marginals

# Ground-truth gloss and the two hypotheses from the second qualitative example
REF = "我/可以/支持/你/去/运动/。".split("/")
HYP_BASELINE = "我/可以/支持/你/锻炼/。".split("/")
HYP_TFNET = "我/可以/支持/你/去/运动/。".split("/")


class TestCollapse:
    @pytest.mark.parametrize("path, want", [
        ([0, 1, 1, 0, 2, 2, 2], [1, 2]),
        ([1, 0, 1], [1, 1]),
        ([1, 1], [1]),
        ([0, 0, 0], []),
        ([], []),
    ])
    def test_rule(self, path, want):
        assert collapse(path) == want


class TestGreedy:
    def test_argmax_path(self):
        logits = np.log(np.array([[0.1, 0.8, 0.1], [0.6, 0.3, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]))
        res = greedy_decode(logits)
        assert res.glosses == [1, 1, 2]
        assert res.log_score == pytest.approx(np.log(0.8 * 0.6 * 0.8 * 0.8))
        assert res.beam_width == 1

    def test_all_blank(self):
        assert greedy_decode(np.array([[5.0, 0.0], [5.0, 0.0]])).glosses == []


class TestBeam:
    def test_matches_exhaustive_marginals(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            T, K = int(rng.integers(1, 6)), int(rng.integers(2, 4))
            logits = rng.normal(size=(T, K)) * 2
            want, score = best_labelling(logits)
            res = beam_decode(logits, width=K ** T)
            assert tuple(res.glosses) == want
            assert res.log_score == pytest.approx(score, rel=1e-10)

    def test_scores_are_prefix_marginals(self):
        logits = np.random.default_rng(1).normal(size=(4, 3))
        marg = label_marginals(logits)
        res = beam_decode(logits, 100)
        assert res.log_score == pytest.approx(marg[tuple(res.glosses)], rel=1e-12)

    def test_beats_greedy_when_paths_split(self):
        # best single path is blank-blank, but the label 1 collects more mass over its paths
        p = np.array([[0.4, 0.35, 0.25], [0.4, 0.35, 0.25]])
        assert greedy_decode(np.log(p)).glosses == []
        assert beam_decode(np.log(p), 4).glosses == [1]

    def test_tie_prefers_smaller_prefix(self):
        assert beam_decode(np.zeros((1, 3)), 3).glosses == []
        assert beam_decode(np.array([[-5.0, 0.0, 0.0]]), 3).glosses == [1]

    def test_width_one_is_valid(self):
        res = beam_decode(np.random.default_rng(2).normal(size=(5, 4)), 1)
        assert res.beam_width == 1 and np.isfinite(res.log_score)

    def test_invalid_width(self):
        with pytest.raises(ValueError):
            beam_decode(np.zeros((2, 2)), 0)


class TestWER:
    def test_qualitative_example(self):
        rep = wer(REF, HYP_BASELINE)
        assert (rep.sub, rep.dele, rep.ins) == (1, 1, 0)
        assert rep.sum == 7
        assert round(rep.wer_percent, 1) == 28.6
        assert wer(REF, HYP_TFNET).wer_percent == 0.0

    def test_counts(self):
        rep = wer(list("abc"), list("axcd"))
        assert (rep.sub, rep.dele, rep.ins, rep.errors) == (1, 0, 1, 2)
        assert rep.wer_percent == pytest.approx(200 / 3)

    def test_exceeds_100_percent(self):
        assert wer(["a"], ["b", "c", "d"]).wer_percent == 300.0

    def test_empty_hypothesis(self):
        rep = wer(list("abc"), [])
        assert rep.dele == 3 and rep.wer_percent == 100.0

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            wer([], ["a"])

    def test_tie_breaking(self):
        # "ab" vs "ba": one diagonal-first script is two substitutions
        assert [op for op, *_ in wer("ab", "ba").ops] == ["S", "S"]

    def test_exhaustive_scripts(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            ref = list(rng.integers(0, 3, size=int(rng.integers(1, 5))))
            hyp = list(rng.integers(0, 3, size=int(rng.integers(0, 5))))
            rep = wer(ref, hyp)
            assert rep.errors == min(edit_scripts(ref, hyp)) == edit_distance_exhaustive(ref, hyp)

    def test_ops_rebuild_both_sides(self):
        for ref, hyp in itertools.product(["abc", "aab", "c"], ["", "ab", "cba", "abcc"]):
            ops = wer(ref, hyp).ops
            assert "".join(r for _, r, _ in ops if r is not None) == ref
            assert "".join(h for _, _, h in ops if h is not None) == hyp


class TestReports:
    def test_alignment_marks_errors(self):
        rep = alignment_report(REF, HYP_BASELINE)
        lines = rep.text.splitlines()
        assert lines[0].startswith("REF:") and lines[1].startswith("HYP:") and lines[2].startswith("OP:")
        assert rep.marked == 2
        assert "锻炼" in lines[1] and "*" in lines[1]

    def test_columns_line_up_for_wide_glyphs(self):
        lines = alignment_report(["我", "a"], ["b", "a"]).text.splitlines()
        assert lines[0].index("a") + 1 == lines[1].index("a")  # CJK glyph takes two columns

    def test_eval_record_is_json(self):
        rep = wer(REF, HYP_BASELINE)
        rec = json.loads(eval_record(7, REF, HYP_BASELINE, rep))
        assert rec["id"] == 7 and rec["sub"] == 1 and rec["del"] == 1 and rec["ins"] == 0
        assert rec["ref"] == "/".join(REF)

    def test_corpus_summary_is_micro_average(self):
        rec = json.loads(corpus_summary("dev", errors=3, ref_tokens=12, sentences=4))
        assert rec["wer"] == 25.0 and rec["sentences"] == 4
