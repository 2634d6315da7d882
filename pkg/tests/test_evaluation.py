import numpy as np
import pytest

from mlmkit.evaluation import (
    DepSentence,
    EntitySpan,
    GSD_REFERENCE_SENTENCES,
    GSD_REFERENCE_TOKENS,
    MetricError,
    ParseError,
    XNLI_DEV_SIZE,
    bio_to_spans,
    entity_f1,
    nli_accuracy,
    read_bio,
    read_conllu,
    read_nli,
    spans_to_bio,
    uas_las,
    upos_accuracy,
    write_conllu,
)

CONLLU_2WORD = (
    "# sent_id = 1\n"
    "1\tle\t_\tDET\t_\t_\t2\tdet\t_\t_\n"
    "2\tchat\t_\tNOUN\t_\t_\t0\troot\t_\t_\n"
    "\n"
)


class TestReadConllu:
    def test_hand_parsed_fixture(self, tmp_path):
        path = tmp_path / "g.conllu"
        path.write_text(CONLLU_2WORD)
        (sent,) = read_conllu(path)
        assert sent.words == ["le", "chat"]
        assert sent.upos == ["DET", "NOUN"]
        assert sent.heads == [2, 0]
        assert sent.deprels == ["det", "root"]

    def test_comments_and_blanks_only(self, tmp_path):
        path = tmp_path / "g.conllu"
        path.write_text("# a comment\n\n# another\n\n")
        assert read_conllu(path) == []

    def test_reference_treebank_counts_documented(self):
        # full-corpus counts of the GSD treebank these readers target
        assert GSD_REFERENCE_SENTENCES == 16_342
        assert GSD_REFERENCE_TOKENS == 389_363

    def test_multiword_tokens_and_empty_nodes_skipped(self, tmp_path):
        path = tmp_path / "g.conllu"
        path.write_text(
            "1-2\tdu\t_\t_\t_\t_\t_\t_\t_\t_\n"
            "1\tde\t_\tADP\t_\t_\t3\tcase\t_\t_\n"
            "2\tle\t_\tDET\t_\t_\t3\tdet\t_\t_\n"
            "2.1\tellipse\t_\t_\t_\t_\t_\t_\t_\t_\n"
            "3\tchat\t_\tNOUN\t_\t_\t0\troot\t_\t_\n\n"
        )
        (sent,) = read_conllu(path)
        assert sent.words == ["de", "le", "chat"]
        assert sent.heads == [3, 3, 0]

    def test_column_count_error_with_line_number(self, tmp_path):
        path = tmp_path / "g.conllu"
        path.write_text("1\tle\tDET\n")
        with pytest.raises(ParseError, match=":1:"):
            read_conllu(path)

    def test_non_integer_head_error(self, tmp_path):
        path = tmp_path / "g.conllu"
        path.write_text("1\tle\t_\tDET\t_\t_\tX\tdet\t_\t_\n")
        with pytest.raises(ParseError, match="non-integer HEAD"):
            read_conllu(path)

    def test_head_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "g.conllu"
        path.write_text("1\tle\t_\tDET\t_\t_\t5\tdet\t_\t_\n\n")
        with pytest.raises(ParseError):
            read_conllu(path)

    def test_self_head_rejected(self):
        with pytest.raises(ParseError):
            DepSentence(["a"], ["X"], [1], ["dep"])

    def test_write_read_round_trip(self, tmp_path):
        sentences = [
            DepSentence(["le", "chat", "dort"], ["DET", "NOUN", "VERB"], [2, 3, 0],
                        ["det", "subj", "root"]),
            DepSentence(["vite"], ["ADV"], [0], ["root"]),
        ]
        path = tmp_path / "out.conllu"
        write_conllu(sentences, path)
        again = read_conllu(path)
        assert [s.words for s in again] == [s.words for s in sentences]
        assert [s.upos for s in again] == [s.upos for s in sentences]
        assert [s.heads for s in again] == [s.heads for s in sentences]
        assert [s.deprels for s in again] == [s.deprels for s in sentences]


class TestReadBio:
    def test_basic_span(self, tmp_path):
        path = tmp_path / "b.bio"
        path.write_text("Anna\tB-PER\nSmith\tI-PER\nwalks\tO\n\n")
        sentences, warnings = read_bio(path)
        assert sentences[0].spans == [EntitySpan("PER", 0, 2)]
        assert warnings == []

    def test_lenient_orphan_inside(self, tmp_path):
        path = tmp_path / "b.bio"
        path.write_text("goes\tO\nParis\tI-LOC\n\n")
        sentences, warnings = read_bio(path)
        assert sentences[0].spans == [EntitySpan("LOC", 1, 2)]
        assert len(warnings) == 1

    def test_all_outside(self, tmp_path):
        path = tmp_path / "b.bio"
        path.write_text("a\tO\nb\tO\n\n")
        sentences, _ = read_bio(path)
        assert sentences[0].spans == []

    def test_malformed_tag_error_with_line(self, tmp_path):
        path = tmp_path / "b.bio"
        path.write_text("a\tO\nb\tPER\n")
        with pytest.raises(ParseError, match=":2:"):
            read_bio(path)

    def test_column_error(self, tmp_path):
        path = tmp_path / "b.bio"
        path.write_text("only-one-column\n")
        with pytest.raises(ParseError, match="2 columns"):
            read_bio(path)

    def test_type_change_without_b(self):
        spans, warnings = bio_to_spans(["B-PER", "I-LOC", "O"])
        assert spans == [EntitySpan("PER", 0, 1), EntitySpan("LOC", 1, 2)]
        assert len(warnings) == 1

    def test_spans_to_bio_round_trip(self):
        tags = ["B-PER", "I-PER", "O", "B-LOC", "B-LOC", "I-LOC"]
        spans, _ = bio_to_spans(tags)
        assert spans_to_bio(spans, len(tags)) == tags


class TestUposAccuracy:
    def _pair(self, gold_tags, pred_tags):
        n = len(gold_tags)
        heads = [0] + [1] * (n - 1)
        rels = ["root"] + ["dep"] * (n - 1)
        words = [f"w{i}" for i in range(n)]
        return (
            [DepSentence(words, list(gold_tags), heads, rels)],
            [DepSentence(words, list(pred_tags), heads, rels)],
        )

    def test_perfect(self):
        gold, pred = self._pair("ABCD", "ABCD")
        assert upos_accuracy(gold, pred) == 1.0

    def test_one_wrong_of_four(self):
        gold, pred = self._pair("ABCD", "ABCX")
        assert upos_accuracy(gold, pred) == 0.75

    def test_misaligned_error(self):
        gold, _ = self._pair("ABC", "ABC")
        _, pred = self._pair("ABCD", "ABCD")
        with pytest.raises(MetricError):
            upos_accuracy(gold, pred)


class TestUasLas:
    def test_perfect(self):
        gold = [DepSentence(["a", "b"], ["X", "X"], [2, 0], ["dep", "root"])]
        assert uas_las(gold, gold) == (1.0, 1.0)

    def test_heads_right_half_labels_wrong(self):
        gold = [DepSentence(["a", "b"], ["X", "X"], [2, 0], ["dep", "root"])]
        pred = [DepSentence(["a", "b"], ["X", "X"], [2, 0], ["dep", "other"])]
        assert uas_las(gold, pred) == (1.0, 0.5)

    def test_hand_counted_three_words(self):
        # one head error (word 2) and one label error (word 3), different words:
        # UAS = 2/3 (words 1 and 3 attach right), LAS = 1/3 (only word 1 fully right)
        gold = [DepSentence(["a", "b", "c"], ["X"] * 3, [0, 1, 1], ["root", "m", "m"])]
        pred = [DepSentence(["a", "b", "c"], ["X"] * 3, [0, 3, 1], ["root", "m", "n"])]
        uas, las = uas_las(gold, pred)
        assert np.isclose(uas, 2 / 3)
        assert np.isclose(las, 1 / 3)

    def test_las_never_exceeds_uas(self):
        rng = np.random.default_rng(8)
        rels = ["a", "b", "c"]
        for _ in range(100):
            n = int(rng.integers(1, 7))
            def tree():
                heads = []
                for i in range(n):
                    options = [h for h in range(n + 1) if h != i + 1]
                    heads.append(int(options[rng.integers(len(options))]))
                # not necessarily a valid arborescence; attachment scoring
                # only compares pointers, but DepSentence validation wants
                # valid range, which this satisfies
                return heads
            words = [f"w{i}" for i in range(n)]
            upos = ["X"] * n
            gold = [DepSentence(words, upos, tree(), [rels[int(rng.integers(3))] for _ in range(n)])]
            pred = [DepSentence(words, upos, tree(), [rels[int(rng.integers(3))] for _ in range(n)])]
            uas, las = uas_las(gold, pred)
            assert 0.0 <= las <= uas <= 1.0

    def test_permutation_invariance(self):
        s1 = DepSentence(["a", "b"], ["X", "Y"], [2, 0], ["dep", "root"])
        s2 = DepSentence(["c"], ["Z"], [0], ["root"])
        p1 = DepSentence(["a", "b"], ["X", "Y"], [0, 0], ["root", "root"])
        p2 = DepSentence(["c"], ["Z"], [0], ["other"])
        assert uas_las([s1, s2], [p1, p2]) == uas_las([s2, s1], [p2, p1])


class TestEntityF1:
    def test_perfect_five_spans(self):
        gold = [
            [EntitySpan("PER", 0, 2), EntitySpan("LOC", 3, 4)],
            [EntitySpan("ORG", 0, 1), EntitySpan("PER", 2, 3), EntitySpan("LOC", 4, 6)],
        ]
        assert entity_f1(gold, gold) == (1.0, 1.0, 1.0)

    def test_boundary_mismatch_scores_zero(self):
        gold = [[EntitySpan("PER", 0, 2)]]
        pred = [[EntitySpan("PER", 0, 1)]]
        assert entity_f1(gold, pred) == (0.0, 0.0, 0.0)

    def test_hand_counted_intersection(self):
        # gold 3 spans, pred 4 spans, 2 exact matches
        gold = [[EntitySpan("PER", 0, 1), EntitySpan("LOC", 2, 3), EntitySpan("ORG", 4, 5)]]
        pred = [[EntitySpan("PER", 0, 1), EntitySpan("LOC", 2, 3),
                 EntitySpan("ORG", 4, 6), EntitySpan("PER", 7, 8)]]
        p, r, f = entity_f1(gold, pred)
        assert p == 0.5
        assert np.isclose(r, 2 / 3)
        assert np.isclose(f, 4 / 7)

    def test_both_empty(self):
        assert entity_f1([[]], [[]]) == (1.0, 1.0, 1.0)

    def test_one_side_empty(self):
        gold = [[EntitySpan("PER", 0, 1)]]
        assert entity_f1(gold, [[]])[2] == 0.0
        assert entity_f1([[]], gold)[2] == 0.0

    def test_symmetry_swaps_precision_recall(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            def spans():
                out = []
                pos = 0
                for _ in range(int(rng.integers(0, 4))):
                    pos += int(rng.integers(1, 3))
                    end = pos + int(rng.integers(1, 3))
                    out.append(EntitySpan(["PER", "LOC"][int(rng.integers(2))], pos, end))
                    pos = end
                return out
            gold = [spans() for _ in range(3)]
            pred = [spans() for _ in range(3)]
            p1, r1, f1 = entity_f1(gold, pred)
            p2, r2, f2 = entity_f1(pred, gold)
            assert (p1, r1) == (r2, p2)
            assert np.isclose(f1, f2)


class TestNli:
    def test_all_correct(self):
        assert nli_accuracy(["entailment", "neutral"], ["entailment", "neutral"]) == 1.0

    def test_three_of_five(self):
        gold = ["entailment"] * 5
        pred = ["entailment"] * 3 + ["neutral"] * 2
        assert nli_accuracy(gold, pred) == 0.6

    def test_reader_counts_dev_sized_file(self, tmp_path):
        # the dev split of the reference inference dataset holds 2490 rows
        path = tmp_path / "dev.tsv"
        labels = ["entailment", "neutral", "contradiction"]
        rows = ["premise\thypothesis\tlabel"]
        rows += [f"p {i}\th {i}\t{labels[i % 3]}" for i in range(XNLI_DEV_SIZE)]
        path.write_text("\n".join(rows) + "\n")
        examples = read_nli(path)
        assert len(examples) == XNLI_DEV_SIZE == 2490

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("premise\thypothesis\tlabel\na\tb\tmaybe\n")
        with pytest.raises(ParseError, match=":2:"):
            read_nli(path)

    def test_header_required(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("")
        with pytest.raises(ParseError, match="header"):
            read_nli(path)

    def test_column_count(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("premise\thypothesis\tlabel\na\tb\n")
        with pytest.raises(ParseError, match="3 columns"):
            read_nli(path)
