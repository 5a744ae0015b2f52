import numpy as np
import pytest

from sfdm.config import Config, ConfigError, parse_config
from sfdm.experiment import (
    VARIANT_NAMES,
    emit_overlay,
    proportion_sweep,
    read_overlay,
    recordings_to_windows,
    resolve_split,
    to_markdown,
    write_report,
)
from sfdm.signal_data import make_synthetic_corpus

from conftest import TOY


@pytest.fixture(scope="module")
def toy():
    cfg = parse_config(TOY)
    return cfg, recordings_to_windows(make_synthetic_corpus(cfg.corpus_spec()), cfg)


@pytest.fixture(scope="module")
def report(toy):
    cfg, windows = toy
    return proportion_sweep(windows, cfg)


class TestResolveSplit:
    def test_auto(self):
        spec = resolve_split(["S03", "S01", "S02", "S04"], Config())
        assert (list(spec.train_subjects), list(spec.val_subjects), list(spec.test_subjects)) == (
            ["S01", "S02"], ["S03"], ["S04"])

    def test_folds_rotate_test_subject(self):
        subjects = ["S01", "S02", "S03", "S04"]
        tests = [resolve_split(subjects, Config(), k).test_subjects[0] for k in range(4)]
        assert sorted(tests) == subjects

    def test_explicit(self):
        cfg = Config({"split.train": "A,B", "split.val": "C", "split.test": "D"})
        assert list(resolve_split(["A", "B", "C", "D"], cfg).test_subjects) == ["D"]

    def test_too_few_subjects(self):
        with pytest.raises(ConfigError):
            resolve_split(["A", "B"], Config())


class TestSweep:
    def test_table_shape(self, report):
        # five proportions by four variants, each a mean and std over two seeds
        assert len(report.cells) == 20
        assert {c.proportion for c in report.cells} == {0.2, 0.3, 0.4, 0.5, 1.0}
        assert all(c.macro_f1.n == 2 for c in report.cells)
        assert len(report.runs) == 40

    def test_cell_matches_runs(self, report):
        cell = report.cell(0.2, "baseline")
        vals = [r.macro_f1 for r in report.runs if r.proportion == 0.2 and r.variant == "baseline"]
        assert cell.macro_f1.mean == pytest.approx(np.mean(vals))
        assert cell.macro_f1.std == pytest.approx(np.std(vals, ddof=1))

    def test_report_files(self, report, tmp_path):
        write_report(report, tmp_path)
        md = (tmp_path / "table_macro_f1.md").read_text().splitlines()
        assert len(md) == 2 + 5
        assert md[0].split("|")[2].strip() == VARIANT_NAMES["baseline"]
        assert (tmp_path / "fingerprint.txt").read_text().strip() == report.fingerprint
        csv = (tmp_path / "table_accuracy.csv").read_text().splitlines()
        assert len(csv) == 6 and len(csv[0].split(",")) == 5
        assert read_overlay(tmp_path / "overlay.ndjson")

    def test_needs_two_runs(self, toy):
        cfg, windows = toy
        with pytest.raises(ConfigError):
            proportion_sweep(windows, cfg, seeds=[0])

    def test_bad_variant(self, toy):
        cfg, windows = toy
        with pytest.raises(ConfigError):
            proportion_sweep(windows, cfg, variants=["gan"])


class TestWriters:
    def test_overlay_round_trip(self, tmp_path):
        real = [np.arange(4.0), np.ones(4)]
        synth = [np.zeros(4), np.full(4, 0.25)]
        emit_overlay(real, synth, [0, 2], tmp_path / "o.ndjson")
        back = read_overlay(tmp_path / "o.ndjson")
        assert [b["class"] for b in back] == [0, 2]
        assert back[0]["real"] == [0.0, 1.0, 2.0, 3.0]
        assert back[1]["synthetic"] == [0.25] * 4

    def test_overlay_length_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            emit_overlay([np.zeros(3)], [np.zeros(4)], [0], tmp_path / "o.ndjson")

    def test_markdown_alignment(self):
        md = to_markdown(["a", "bbb"], [["1", "2"], ["333", "4"]])
        lines = md.splitlines()
        assert len({len(line) for line in lines}) == 1
        assert lines[1] == "|-----|-----|"
