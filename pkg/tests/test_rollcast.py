import json

import numpy as np
import pytest

from conftest import grid_panel, quarter_range, simple_spec
from fundcast import boostwood, feature_forge, rollcast, synthgen, tuner
from fundcast.boostwood import HyperParams
from fundcast.errors import InsufficientHistoryError, ReportError
from fundcast.feature_forge import FeatureColumnMeta, LabelVector
from fundcast.panel_ingest import CalendarQuarter, Format
from fundcast.rollcast import (
    ConsensusTable,
    SubsetConfig,
    aggregate_report,
    build_records,
    conditional_accuracy,
    consensus_classes,
    decompose_importance,
    enumerate_subsets,
    read_jsonl,
    render_text,
    run_all_subsets,
    run_subset,
    write_jsonl,
)
from fundcast.spectral_reduce import PcaModel


class TestEnumerateSubsets:
    def test_120_quarters_yield_40_advancing_splits(self):
        quarters = quarter_range(1988, 1, 120)
        splits = enumerate_subsets(quarters, 80)
        assert len(splits) == 40
        for a, b in zip(splits, splits[1:]):
            assert b.test_quarter.index == a.test_quarter.index + 1
        for s in splits:
            assert len(s.train_quarters) == 80
            assert s.test_quarter.index == s.train_quarters[-1].index + 1

    def test_81_quarters_single_split(self):
        splits = enumerate_subsets(quarter_range(1988, 1, 81), 80)
        assert len(splits) == 1
        assert splits[0].index == 1

    def test_80_quarters_insufficient(self):
        with pytest.raises(InsufficientHistoryError):
            enumerate_subsets(quarter_range(1988, 1, 80), 80)

    def test_gap_rejected(self):
        quarters = quarter_range(1988, 1, 90)
        del quarters[40]
        with pytest.raises(InsufficientHistoryError, match="consecutive"):
            enumerate_subsets(quarters, 80)


class TestConditionalAccuracy:
    def hand_table(self):
        model = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 1, 2, 0])
        cons = np.array([0, 1, 2, 0, 1, 2, 2, 0, 1, 0, 1, 2])
        actual = np.array([0, 1, 2, 0, 0, 1, 0, 1, 2, 0, 1, 2])
        return model, cons, actual

    def test_twelve_row_hand_counts(self):
        model, cons, actual = self.hand_table()
        m = conditional_accuracy(model, cons, actual)
        assert m.n_converge == 6
        assert m.n_diverge == 6
        assert m.converge_model_acc == pytest.approx(4 / 6)
        assert m.diverge_model_acc == pytest.approx(3 / 6)
        assert m.diverge_consensus_acc == pytest.approx(3 / 6)
        assert m.accuracy == pytest.approx(7 / 12)

    def test_total_accuracy_decomposition_identity(self):
        model, cons, actual = self.hand_table()
        m = conditional_accuracy(model, cons, actual)
        recomposed = (m.n_converge * m.converge_model_acc
                      + m.n_diverge * m.diverge_model_acc) / m.n_scored
        assert recomposed == pytest.approx(m.accuracy)

    def test_converge_set_model_equals_consensus_accuracy(self):
        model, cons, actual = self.hand_table()
        m = conditional_accuracy(model, cons, actual)
        # identical predictions on the converge set, same actuals
        assert m.converge_model_acc == pytest.approx(m.converge_consensus_acc)

    def test_model_identical_to_consensus(self):
        model = np.array([0, 1, 2, 1])
        actual = np.array([0, 1, 1, 1])
        m = conditional_accuracy(model, model.copy(), actual)
        assert m.n_diverge == 0
        assert np.isnan(m.diverge_model_acc)
        assert m.converge_model_acc == pytest.approx(m.accuracy)

    def test_fully_disjoint_predictions(self):
        model = np.array([0, 0, 0])
        cons = np.array([1, 1, 1])
        actual = np.array([0, 1, 2])
        m = conditional_accuracy(model, cons, actual)
        assert m.n_converge == 0
        assert np.isnan(m.converge_model_acc)

    def test_split_pairing_uses_second_actual(self):
        model = np.array([0, 1])
        cons = np.array([0, 1])
        actual = np.array([0, 0])
        actual_cons = np.array([0, 1])
        m = conditional_accuracy(model, cons, actual, actual_cons)
        assert m.accuracy == pytest.approx(0.5)
        assert m.consensus_accuracy == pytest.approx(1.0)


def consensus_panel(n_companies=9, n_quarters=3):
    quarters = quarter_range(2000, 1, n_quarters)
    companies = [f"C{i}" for i in range(1, n_companies + 1)]
    ni = [[10.0 + i] * n_quarters for i in range(n_companies)]
    atq = [[10.0] * n_quarters for _ in range(n_companies)]
    return grid_panel(companies, quarters, {"niq": ni, "atq": atq})


class TestConsensusClasses:
    def test_consensus_equal_to_actual_everywhere(self):
        panel = consensus_panel()
        rows = {}
        for i, (company, q) in enumerate(panel.keys):
            actual = float(panel.columns["niq"][i]) * 1.1
            rows[(company, q)] = (actual, actual, actual)
        table = ConsensusTable(rows)
        cons, actual = consensus_classes(table, panel, "qoq", 3, "quantile_rank")
        ok = ~np.isnan(cons.values)
        assert ok.any()
        assert (cons.values[ok] == actual.values[ok]).all()

    def test_rank_reversal_middle_bin_survives(self):
        panel = consensus_panel(n_companies=9, n_quarters=2)
        q1, q2 = quarter_range(2000, 1, 2)
        rows = {}
        for k, company in enumerate(sorted({c for c, _ in panel.keys}), start=1):
            rows[(company, q1)] = (np.nan, np.nan, 0.0)
            # actual rises with k, consensus estimate falls with k
            rows[(company, q2)] = (10.0 - k, 10.0 - k, float(k))
        table = ConsensusTable(rows)
        cons, actual = consensus_classes(table, panel, "qoq", 3, "quantile_rank")
        at_q1 = [i for i, (_, q) in enumerate(panel.keys) if q == q1]
        cons_q1 = cons.values[at_q1]
        act_q1 = actual.values[at_q1]
        assert not np.isnan(cons_q1).any()
        assert (cons_q1 == act_q1).mean() == pytest.approx(1 / 3)

    def test_empty_overlap_all_missing(self):
        panel = consensus_panel()
        other_q = CalendarQuarter(1950, 1)
        table = ConsensusTable({("ZZ", other_q): (1.0, 1.0, 1.0)})
        cons, actual = consensus_classes(table, panel, "qoq", 3, "quantile_rank")
        assert np.isnan(cons.values).all()
        assert np.isnan(actual.values).all()


def make_stump_tree(feature, gain):
    tree = boostwood.Tree()
    root = tree.add_node()
    left = tree.add_node()
    right = tree.add_node()
    tree.is_leaf[root] = False
    tree.feature[root] = feature
    tree.threshold[root] = 0
    tree.left[root] = left
    tree.right[root] = right
    tree.gain[root] = gain
    return tree


class TestDecomposeImportance:
    def _model(self, d, splits):
        trees = [[make_stump_tree(f, g) for f, g in splits]]
        return boostwood.GbdtModel(n_classes=len(splits), n_features=d,
                                   miss_code=255, base_score=np.zeros(len(splits)),
                                   trees=trees, params=HyperParams())

    def _identity_pca(self, d):
        return PcaModel(np.zeros(d), np.eye(d), np.ones(d),
                        np.full(d, 1 / d), kept=d)

    def _metas(self, d):
        formats = [Format.QOQ, Format.YOY, Format.PCT_ASSETS, Format.PCT_REVENUE]
        return [FeatureColumnMeta(f"v{i}", formats[i % 4], lag=i % 20)
                for i in range(d)]

    def test_identity_loadings_follow_model_ranking(self):
        d = 12
        model = self._model(d, [(2, 5.0), (0, 3.0)])
        dec = decompose_importance(model, self._identity_pca(d), self._metas(d),
                                   top_c=2, top_v=1)
        assert dec.components == [2, 0]
        assert dec.entries[0][0][0] == "v2_pct_assets_l02"
        assert dec.entries[1][0][0] == "v0_qoq"

    def test_tally_counts_sum_to_fifty(self):
        d = 24
        model = self._model(d, [(i, float(10 - i)) for i in range(5)])
        dec = decompose_importance(model, self._identity_pca(d), self._metas(d),
                                   top_c=5, top_v=10)
        assert dec.total_entries == 50
        assert dec.tally.sum() == 50

    def test_bucket_layout_from_lags(self):
        d = 24
        model = self._model(d, [(0, 1.0)])
        dec = decompose_importance(model, self._identity_pca(d), self._metas(d))
        assert dec.bucket_labels == ["0-3", "4-7", "8-11", "12-15", "16-19"]

    def test_record_roundtrips_through_json(self):
        d = 12
        model = self._model(d, [(1, 2.0)])
        dec = decompose_importance(model, self._identity_pca(d), self._metas(d),
                                   top_c=2, top_v=3)
        rec = dec.to_record()
        assert json.loads(json.dumps(rec)) == rec


def small_pipeline(seed=5, n_companies=20, n_quarters=34):
    spec = synthgen.SignalSpec(n_companies=n_companies, n_quarters=n_quarters,
                               seed=seed, noise_sd=0.6, missing_rate=0.04)
    panel, _ = synthgen.generate_panel(spec)
    schema = synthgen.default_schema(spec)
    from fundcast.panel_ingest import shift_forward_aligned
    panel = shift_forward_aligned(panel, schema)
    feats = feature_forge.convert_formats(panel, schema)
    labels = feature_forge.build_labels(panel, "qoq", 3, "quantile_rank")
    splits = enumerate_subsets(panel.quarters(), 26)
    cfg = SubsetConfig(
        schema=schema, n_lags=4, look_back=4, validation_size=4,
        search_budget=2,
        search_space=tuner.SearchSpace({
            "learning_rate": tuner.ParamRange(0.1, 0.4),
            "num_leaves": tuner.ParamRange(4, 12, "integer"),
        }),
        base_params=HyperParams(n_rounds=10, max_bin=16, min_data_in_leaf=5),
        early_stopping=4, seed=19)
    return splits, feats, labels, cfg


class TestRunSubset:
    def test_deterministic_under_same_seed(self):
        splits, feats, labels, cfg = small_pipeline()
        a = run_subset(splits[0], feats, labels, cfg)
        b = run_subset(splits[0], feats, labels, cfg)
        assert a.model_text == b.model_text
        np.testing.assert_array_equal(a.predictions, b.predictions)
        assert a.to_record() == b.to_record()

    def test_removing_test_rows_leaves_model_byte_identical(self):
        splits, feats, labels, cfg = small_pipeline()
        split = splits[0]
        full = run_subset(split, feats, labels, cfg)
        mask = np.array([q != split.test_quarter for _, q in feats.keys])
        cut = run_subset(split, feats.take_rows(mask), labels, cfg)
        assert cut.model_text == full.model_text
        assert cut.n_test == 0
        assert np.isnan(cut.metrics.accuracy)

    def test_single_class_training_labels_degenerate(self):
        splits, feats, labels, cfg = small_pipeline()
        split = splits[0]
        train_set = {q.index for q in split.train_quarters}
        values = labels.values.copy()
        for i, (_, q) in enumerate(labels.keys):
            if q.index in train_set and not np.isnan(values[i]):
                values[i] = 1.0
        forced = LabelVector(labels.keys, values, 3, "qoq", "quantile_rank")
        with pytest.warns(UserWarning, match="single class"):
            res = run_subset(split, feats, forced, cfg)
        share = (res.actuals == 1).mean()
        assert res.metrics.accuracy == pytest.approx(share)

    def test_prediction_count_matches_surviving_test_rows(self):
        splits, feats, labels, cfg = small_pipeline()
        res = run_subset(splits[0], feats, labels, cfg)
        assert len(res.predictions) == res.n_test
        assert len(res.test_companies) == res.n_test
        assert res.n_test > 0


def fake_record(idx, acc, quarter="2001Q1"):
    return {
        "record_type": "subset", "subset": idx, "train_start": "1990Q1",
        "train_end": "2000Q4", "test_quarter": quarter, "horizon": "qoq",
        "n_classes": 3, "scheme": "quantile_rank", "pca_kept": 4,
        "n_train": 100, "n_test": 10, "tuned_params": {},
        "predictions": [],
        "metrics": {"accuracy": acc, "n_scored": 10,
                    "per_class": {}, "consensus_available": False,
                    "consensus_accuracy": None,
                    "consensus_mean_accuracy": None,
                    "consensus_median_accuracy": None,
                    "n_converge": 0, "n_diverge": 0,
                    "converge_model_acc": None, "converge_consensus_acc": None,
                    "diverge_model_acc": None, "diverge_consensus_acc": None},
        "importance": None, "dedupe_dropped": 0,
        "impute": {"deleted_rows": 0, "deleted_columns": [],
                   "relevant_filled": 0, "constant_filled": 0},
    }


class TestReportRendering:
    def test_two_subsets_mean_accuracy(self):
        records = [{"record_type": "config", "config": {"seed": 1}},
                   fake_record(1, 0.4), fake_record(2, 0.6, "2001Q2")]
        text = render_text(records)
        assert "0.5000" in text

    def test_single_subset_report_equals_its_metrics(self):
        records = [fake_record(1, 0.42)]
        text = render_text(records)
        assert "0.4200" in text

    def test_no_subsets_rejected(self):
        with pytest.raises(ReportError):
            render_text([{"record_type": "config", "config": {}}])

    def test_rendering_is_deterministic(self):
        records = [fake_record(1, 0.4), fake_record(2, 0.6)]
        assert render_text(records) == render_text(records)

    def test_jsonl_roundtrip(self, tmp_path):
        records = [{"record_type": "config", "config": {"seed": 3}},
                   fake_record(1, 0.5)]
        path = tmp_path / "report.jsonl"
        write_jsonl(records, path)
        assert read_jsonl(path) == records

    def test_corrupted_line_names_line_number(self, tmp_path):
        path = tmp_path / "report.jsonl"
        path.write_text('{"record_type": "config", "config": {}}\nnot-json\n')
        with pytest.raises(ReportError, match="line 2"):
            read_jsonl(path)

    def test_build_records_sorted_by_subset(self):
        splits, feats, labels, cfg = small_pipeline()
        r1 = run_subset(splits[0], feats, labels, cfg)
        r2 = run_subset(splits[1], feats, labels, cfg)
        records = build_records([r2, r1], {"seed": 19})
        assert records[0]["record_type"] == "config"
        assert [r["subset"] for r in records[1:]] == [1, 2]
        rendered = render_text(records)
        assert "per-quarter accuracy" in rendered


class TestAggregateReport:
    def test_single_subset_report_matches_its_metrics(self):
        splits, feats, labels, cfg = small_pipeline()
        result = run_subset(splits[0], feats, labels, cfg)
        rep = aggregate_report([result], {"seed": 19})
        assert rep.mean_accuracy == pytest.approx(result.metrics.accuracy)
        assert len(rep.accuracy_series) == 1
        assert rep.accuracy_series[0][0] == str(result.split.test_quarter)

    def test_mean_of_two_accuracies(self):
        rep = rollcast.Report([fake_record(1, 0.4), fake_record(2, 0.6)])
        assert rep.mean_accuracy == pytest.approx(0.5)

    def test_accuracy_series_emitted_per_subset(self):
        records = [fake_record(i, 0.3 + 0.01 * i, f"2001Q{(i % 4) + 1}")
                   for i in range(1, 11)]
        rep = rollcast.Report(records)
        assert len(rep.accuracy_series) == 10

    def test_empty_results_rejected(self):
        with pytest.raises(ReportError):
            aggregate_report([], {})


class TestRunAllSubsets:
    def test_parallel_matches_serial(self):
        splits, feats, labels, cfg = small_pipeline()
        serial = run_all_subsets(splits[:2], feats, labels, cfg, jobs=1)
        threaded = run_all_subsets(splits[:2], feats, labels, cfg, jobs=2)
        assert build_records(serial, {}) == build_records(threaded, {})
