"""Cross-checks over the transcribed benchmark tables.

These pin the transcription itself: cell counts, sign structure, and the
headline arithmetic, plus tamper-detection so a bad edit to the bundled
JSON cannot pass silently.
"""

from __future__ import annotations

import copy

import pytest

from boxttt.evaluation import (
    CLOSED,
    OPEN,
    QARecord,
    check_result_table,
    check_split_statistics,
    load_published_results,
)


@pytest.fixture(scope="module")
def results():
    return load_published_results()


@pytest.fixture(scope="module")
def check(results):
    return check_result_table(results)


class TestTableStructure:
    def test_exactly_48_cell_pairs(self, check):
        assert len(check.deltas) == 48
        main = [d for d in check.deltas if d.source == "main"]
        ablation = [d for d in check.deltas if d.source == "ablation:full-vs-native"]
        assert len(main) == 42  # 7 models x 3 datasets x 2 metrics
        assert len(ablation) == 6  # 3 models x 2 metrics

    def test_every_adapted_cell_beats_native(self, check):
        for d in check.deltas:
            assert d.delta > 0, (d.model, d.dataset, d.metric, d.source)

    def test_no_problems_in_shipped_transcription(self, check):
        assert check.problems == ()
        assert check.ok

    def test_seven_models_three_datasets(self, check):
        main = [d for d in check.deltas if d.source == "main"]
        assert len({d.model for d in main}) == 7
        assert {d.dataset for d in main} == {"vqa-rad", "slake", "pathvqa"}


class TestHeadlineNumbers:
    def test_largest_closed_gain_is_12_32(self, check):
        cell = next(
            d
            for d in check.deltas
            if d.model == "llava"
            and d.dataset == "pathvqa"
            and d.metric == "closed"
            and d.source == "main"
        )
        assert cell.delta == pytest.approx(12.32, abs=0.005)
        closed = [d.delta for d in check.deltas if d.metric == "closed"]
        assert cell.delta == max(closed)

    def test_pathvqa_open_cell_for_generalist(self, check):
        cell = next(
            d
            for d in check.deltas
            if d.model == "llava" and d.dataset == "pathvqa" and d.metric == "open"
        )
        assert cell.native == 7.74 and cell.adapted == 32.60

    def test_ablation_margins_resolve_component_attribution(self, results):
        rows = {r["config"]: r for r in results["ablation"]["llava"]}
        # Removing either training signal costs accuracy on both metrics.
        for metric in (OPEN, CLOSED):
            assert rows["full"][metric] > rows["evidence-only"][metric]
            assert rows["full"][metric] > rows["ema-only"][metric]
            assert rows["evidence-only"][metric] > rows["native"][metric]
            assert rows["ema-only"][metric] > rows["native"][metric]


class TestTamperDetection:
    def test_mutated_cell_breaks_a_claim(self, results):
        mutated = copy.deepcopy(results)
        mutated["main_results"]["llava"]["pathvqa"]["closed"]["adapted"] = 70.00
        damaged = check_result_table(mutated)
        assert any("claim" in p for p in damaged.problems)

    def test_removed_cell_is_reported_missing(self, results):
        mutated = copy.deepcopy(results)
        del mutated["main_results"]["llava"]["slake"]["open"]
        damaged = check_result_table(mutated)
        assert len(damaged.deltas) == 47
        assert any("missing" in p for p in damaged.problems)

    def test_removed_ablation_config_is_reported(self, results):
        mutated = copy.deepcopy(results)
        mutated["ablation"]["llava"] = [
            r for r in mutated["ablation"]["llava"] if r["config"] != "native"
        ]
        damaged = check_result_table(mutated)
        assert any("ablation[llava]" in p for p in damaged.problems)

    def test_unknown_claim_kind_is_flagged(self, results):
        mutated = copy.deepcopy(results)
        mutated["claims"].append({"name": "bogus", "kind": "ratio", "value": 2.0})
        damaged = check_result_table(mutated)
        assert any("bogus" in p for p in damaged.problems)


class TestRecordedStatistics:
    @pytest.mark.parametrize(
        "dataset,split,expected",
        [
            ("vqa-rad", "train", {"images": 313, "qa": 1797, "open": 770, "closed": 1027}),
            ("vqa-rad", "test", {"images": 203, "qa": 451, "open": 179, "closed": 272}),
            ("slake", "test", {"images": 96, "qa": 1061, "open": 645, "closed": 416}),
            ("pathvqa", "test", {"images": 858, "qa": 6761, "open": 3370, "closed": 3391}),
        ],
    )
    def test_recorded_split_counts(self, results, dataset, split, expected):
        assert results["dataset_statistics"][dataset][split] == expected

    def test_qa_counts_are_open_plus_closed(self, results):
        for dataset, splits in results["dataset_statistics"].items():
            for split, counts in splits.items():
                assert counts["qa"] == counts["open"] + counts["closed"], (
                    dataset,
                    split,
                )


class TestSplitStatisticsCheck:
    @staticmethod
    def _records(n_open, n_closed):
        records = []
        for i in range(n_open):
            records.append(
                QARecord(
                    image=f"img{i % 3}.png",
                    question=f"open {i}?",
                    answer="lobe",
                    answer_type=OPEN,
                    dataset="toy",
                    split="test",
                )
            )
        for i in range(n_closed):
            records.append(
                QARecord(
                    image=f"img{i % 3}.png",
                    question=f"closed {i}?",
                    answer="yes",
                    answer_type=CLOSED,
                    dataset="toy",
                    split="test",
                )
            )
        return records

    def test_matching_counts_pass(self):
        results = {
            "dataset_statistics": {
                "toy": {"test": {"images": 3, "qa": 5, "open": 2, "closed": 3}}
            }
        }
        assert check_split_statistics(self._records(2, 3), "toy", "test", results) == []

    def test_mismatch_names_the_count(self):
        results = {
            "dataset_statistics": {
                "toy": {"test": {"images": 3, "qa": 5, "open": 2, "closed": 3}}
            }
        }
        problems = check_split_statistics(self._records(4, 1), "toy", "test", results)
        assert any("open" in p for p in problems)
        assert any("ingested 4" in p for p in problems)

    def test_unknown_dataset_is_a_problem(self, results):
        problems = check_split_statistics(self._records(1, 1), "toy", "test", results)
        assert problems == ["no recorded statistics for toy/test"]
