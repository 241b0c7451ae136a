"""Protocol runner and report aggregation."""

from __future__ import annotations

import statistics

import pytest

from verbkit.classifier import TuneConfig
from verbkit.errors import ConfigError
from verbkit.filtering import passthrough_filter
from verbkit.harness import ProtocolConfig, RunReport, format_table, run_protocol

FAST_TUNE = TuneConfig(epochs=2, learning_rate=0.02, batch_size=5)


class TestRunReport:
    def test_mean_and_std_consistent(self):
        report = RunReport.from_accuracies("m", 5, [1, 2, 3], [0.8, 0.9, 1.0])
        assert report.mean == pytest.approx(statistics.fmean([0.8, 0.9, 1.0]))
        assert report.std == pytest.approx(statistics.stdev([0.8, 0.9, 1.0]))
        assert report.is_consistent()

    def test_single_seed_std_zero(self):
        report = RunReport.from_accuracies("m", 5, [1], [0.8])
        assert report.std == 0.0
        assert report.is_consistent()

    def test_round_trip_dict(self):
        report = RunReport.from_accuracies("m", None, [1, 2], [0.5, 0.7])
        assert RunReport.from_dict(report.to_dict()) == report


class TestProtocol:
    def test_few_shot_on_toy_corpus_beats_chance(self, toy):
        v = passthrough_filter(toy.raw_verbalizer)
        config = ProtocolConfig(
            shots=(5,), seeds=(1, 2, 3, 4, 5), use_calibration=False, tune=FAST_TUNE
        )
        records = []
        reports = run_protocol(
            toy.train, toy.test, v, toy.make_backend, config, on_run=records.append
        )
        assert len(reports) == 1
        report = reports[0]
        assert len(report.accuracies) == 5
        assert report.mean > 1 / 3
        assert report.is_consistent()
        assert len(records) == 5
        assert all(r["shots"] == 5 for r in records)

    def test_zero_shot_ignores_shots_list(self, toy):
        v = passthrough_filter(toy.raw_verbalizer)
        config = ProtocolConfig(
            shots=(1, 5, 10), seeds=(1, 2), zero_shot=True, use_calibration=False
        )
        reports = run_protocol(toy.train, toy.test, v, toy.make_backend, config)
        assert len(reports) == 1
        assert reports[0].shots is None
        assert len(reports[0].accuracies) == 2

    def test_zero_shot_without_calibration_is_seed_invariant(self, toy):
        v = passthrough_filter(toy.raw_verbalizer)
        config = ProtocolConfig(seeds=(1, 2, 3), zero_shot=True, use_calibration=False)
        report = run_protocol(toy.train, toy.test, v, toy.make_backend, config)[0]
        assert len(set(report.accuracies)) == 1

    def test_zero_shot_calibration_varies_with_support_seed(self, toy):
        v = passthrough_filter(toy.raw_verbalizer)
        config = ProtocolConfig(
            seeds=(1, 2), zero_shot=True, use_calibration=True, support_size=10
        )
        report = run_protocol(toy.train, toy.test, v, toy.make_backend, config)[0]
        assert len(report.accuracies) == 2

    def test_partial_records_written_in_order(self, toy):
        v = passthrough_filter(toy.raw_verbalizer)
        config = ProtocolConfig(shots=(1, 2), seeds=(1, 2), use_calibration=False, tune=FAST_TUNE)
        records = []
        run_protocol(toy.train, toy.test, v, toy.make_backend, config, on_run=records.append)
        assert [(r["shots"], r["seed"]) for r in records] == [(1, 1), (1, 2), (2, 1), (2, 2)]
        assert all("train_ids" in r for r in records)

    def test_identical_config_reproduces_accuracies(self, toy):
        v = passthrough_filter(toy.raw_verbalizer)
        config = ProtocolConfig(shots=(2,), seeds=(1, 2), use_calibration=False, tune=FAST_TUNE)
        a = run_protocol(toy.train, toy.test, v, toy.make_backend, config)
        b = run_protocol(toy.train, toy.test, v, toy.make_backend, config)
        assert a == b


class TestFormatTable:
    def test_rows_and_columns(self):
        reports = [
            RunReport.from_accuracies("weighted", 1, [1, 2], [0.5, 0.6]),
            RunReport.from_accuracies("weighted", 5, [1, 2], [0.7, 0.8]),
            RunReport.from_accuracies("soft", 5, [1, 2], [0.65, 0.75]),
            RunReport.from_accuracies("weighted", None, [1], [0.4]),
        ]
        table = format_table(reports)
        lines = table.splitlines()
        assert lines[0].split() == ["shots", "soft", "weighted"]
        assert lines[1].startswith("1")
        assert "zero-shot" in lines[-1]
        assert "75.00" in table  # mean as a percentage

    def test_empty_reports_rejected(self):
        with pytest.raises(ConfigError):
            format_table([])
