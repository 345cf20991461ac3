import json
import struct

import pytest

from weaksv.cli import main
from weaksv.config import SCHEMA, load_run_config, parse_config_text, render_config, render_schema
from weaksv.errors import ConfigError

SMALL = """
seed = 99
[synth]
n_speakers = 6
recordings_per_speaker = 5
segments_per_recording = 4..6
frames_per_segment = 4..8
unknown_speaker_count = 3
[trials]
heldout_fraction = 0.4
n_target = 40
n_nontarget = 40
[stage1]
epochs = 8
batch_size = 24
[stage2]
epochs = 6
batch_size = 24
[select]
top_k = 2
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "small.cfg"
    cfg_path.write_text(SMALL)
    out = root / "run"
    for cmd in ("gen", "diar", "train1", "select", "train2", "eval"):
        code = main([cmd, "--config", str(cfg_path), "--out", str(out)])
        assert code == 0, f"{cmd} failed"
    return out


class TestConfig:
    def test_defaults_parse(self):
        cfg = load_run_config(None)
        assert cfg.seed == 1234
        assert cfg.synth.n_speakers == 40
        assert cfg.stage2.loss.margin.start == 0.1
        assert cfg.stage2.loss.margin.end == 0.3

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("[synth]\nbogus = 1\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("[nope]\nx = 1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("[synth]\nn_speakers = many\n")

    def test_schedule_and_range_syntax(self):
        values = parse_config_text("[stage2]\nmargin = 0.05->0.25\n[synth]\nframes_per_segment = 3..9\n")
        assert values["stage2"]["margin"].start == 0.05
        assert values["stage2"]["margin"].end == 0.25
        assert values["synth"]["frames_per_segment"] == (3, 9)

    def test_preset_resolution_and_override(self):
        cfg = load_run_config(None)
        assert cfg.diar.split_factor == 2.0 and not cfg.diar.drop_noise
        values = parse_config_text("[diar]\npreset = pyannote-like\n")
        cfg2 = _build(values)
        assert cfg2.diar.drop_noise and cfg2.diar.max_clusters == 4
        values = parse_config_text("[diar]\npreset = pyannote-like\nmax_clusters = 6\n")
        cfg3 = _build(values)
        assert cfg3.diar.max_clusters == 6 and cfg3.diar.drop_noise

    def test_render_round_trip(self):
        text = render_config()
        values = parse_config_text(text)
        assert values["synth"]["n_speakers"] == SCHEMA["synth"]["n_speakers"].default

    def test_schema_mentions_every_key(self):
        text = render_schema()
        for section, keys in SCHEMA.items():
            for name in keys:
                assert (f"{section}.{name}" if section else name) in text


def _build(values):
    from weaksv.config import build_run_config

    return build_run_config(values)


class TestPipeline:
    def test_artifacts_exist(self, run_dir):
        for name in ("config.snapshot", "corpus.idx", "corpus.feat", "oracle.tsv",
                     "trials.tsv", "stage1.ckpt", "metrics_stage1.csv", "selection.jsonl",
                     "selection_stats.json", "unknown_pool.jsonl", "stage2.ckpt",
                     "metrics_stage2.csv", "scores_stage1.tsv", "scores_stage2.tsv",
                     "eval_stage1.json", "eval_stage2.json", "report.json"):
            assert (run_dir / name).exists(), name

    def test_feature_file_header(self, run_dir):
        raw = (run_dir / "corpus.feat").read_bytes()
        assert raw[:4] == b"WMLF"
        version, feat_dim, reserved = struct.unpack("<III", raw[4:16])
        assert version == 1 and feat_dim == 20 and reserved == 0
        assert (len(raw) - 16) % (4 * feat_dim) == 0

    def test_idx_line_grammar(self, run_dir):
        for line in (run_dir / "corpus.idx").read_text().splitlines():
            kind = line.split()[0]
            assert kind in ("R", "C", "S")
            if kind == "R":
                parts = line.split()
                assert len(parts) == 5 and parts[4] in ("train", "heldout")
            if kind == "S":
                assert len(line.split()) == 5

    def test_trials_format(self, run_dir):
        lines = (run_dir / "trials.tsv").read_text().splitlines()
        assert len(lines) == 80
        assert sum(int(l.split("\t")[2]) for l in lines) == 40

    def test_report_contents(self, run_dir):
        report = json.loads((run_dir / "report.json").read_text())
        assert set(report["evals"]) == {"stage1", "stage2"}
        for payload in report["evals"].values():
            assert 0.0 <= payload["eer"] <= 1.0
            assert 0.0 <= payload["mindcf"] <= 1.0 + 1e-9
        assert report["selection"]["precision"] > 0
        assert "stage1" in report["schedules"]

    def test_checkpoint_readable(self, run_dir):
        from weaksv.embedder import load_checkpoint

        ckpt = load_checkpoint(run_dir / "stage2.ckpt")
        assert ckpt.velocities is not None
        assert ckpt.prototypes.shape[0] == 6


class TestExitCodes:
    def test_train2_without_selection_fails(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(SMALL)
        out = tmp_path / "empty"
        assert main(["gen", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert main(["train2", "--config", str(cfg_path), "--out", str(out)]) == 1

    def test_bad_config_is_exit_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[synth]\nn_speakers = banana\n")
        assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2

    def test_unknown_key_is_exit_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("whatever = 3\n")
        assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2

    def test_selfcheck_passes(self, capsys):
        assert main(["selfcheck"]) == 0
        assert "all checks passed" in capsys.readouterr().out

    def test_schema_prints(self, capsys):
        assert main(["schema"]) == 0
        assert "synth.n_speakers" in capsys.readouterr().out


class TestDeterminism:
    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(SMALL)
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            for cmd in ("gen", "diar", "train1", "select"):
                assert main([cmd, "--config", str(cfg_path), "--out", str(out)]) == 0
            outs.append(out)
        for name in ("corpus.idx", "corpus.feat", "stage1.ckpt", "selection.jsonl",
                     "metrics_stage1.csv", "unknown_pool.jsonl"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

    def test_seed_override_changes_outputs(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(SMALL)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen", "--config", str(cfg_path), "--out", str(a)]) == 0
        assert main(["gen", "--config", str(cfg_path), "--out", str(b), "--seed", "123"]) == 0
        assert (a / "corpus.feat").read_bytes() != (b / "corpus.feat").read_bytes()


def test_ablate_emits_grid(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text(SMALL + "\n[stage1]\nepochs = 4\n")
    out = tmp_path / "run"
    for cmd in ("gen", "diar"):
        assert main([cmd, "--config", str(cfg_path), "--out", str(out)]) == 0
    assert main(["ablate", "--config", str(cfg_path), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert sorted(report["ablation"]) == [
        "m1", "m2", "m3", "m4", "m5", "m6", "stage2_plain", "stage2_unknown"]
    for name in ("m1", "m6"):
        assert "stage1" in report["ablation"][name]["evals"]
    assert "stage2" in report["ablation"]["stage2_unknown"]["evals"]


def test_diar_preset_flag(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text(SMALL)
    out = tmp_path / "run"
    assert main(["gen", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert main(["diar", "--config", str(cfg_path), "--out", str(out),
                 "--preset", "pyannote-like"]) == 0
    from weaksv.corpus import load_manifest

    corpus = load_manifest(out)
    assert max(len(r.clusters) for r in corpus.recordings) <= 4
