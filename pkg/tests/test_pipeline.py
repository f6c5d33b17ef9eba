"""End-to-end pipeline runs at smoke scale: artifact layout, stamp-driven
skipping, selective invalidation, locking, and packaging stages."""

import os
import re

import numpy as np
import pytest

from spkforge.config import parse_config_text
from spkforge.container import load_params
from spkforge.errors import PipelineError, StageError
from spkforge.manifest import load_manifest
from spkforge.packaging import Registry, load_by_name
from spkforge.pipeline import run_pipeline


def run_logged(cfg_text, start=1, stop=8):
    lines = []
    run = run_pipeline(parse_config_text(cfg_text), start, stop, log=lines.append)
    return run, lines


def stage_actions(lines):
    """{stage: 'skip'|'done'} from the runner's log lines."""
    actions = {}
    for line in lines:
        m = re.match(r"stage (\d+) \(\w+\): (up to date, skipping|done)", line)
        if m:
            actions[int(m.group(1))] = "skip" if "skipping" in m.group(2) else "done"
    return actions


@pytest.fixture(scope="module")
def base(tmp_path_factory, tiny_config_text):
    """One full 1..10 run, shared by the read-only checks below."""
    os.environ.pop("SPKFORGE_REGISTRY", None)
    exp = tmp_path_factory.mktemp("exp")
    text = tiny_config_text(str(exp))
    run, lines = run_logged(text, 1, 10)
    return run, text, lines


class TestFullRun:
    def test_all_stages_execute_once(self, base):
        _, _, lines = base
        assert stage_actions(lines) == {s: "done" for s in range(1, 11)}

    def test_artifact_layout(self, base):
        run, _, _ = base
        for rel in [
            ("corpus", "manifest.txt"),
            ("manifests", "corpus.txt"),
            ("manifests", "perturbed.txt"),
            ("manifests", "train.txt"),
            ("manifests", "eval.txt"),
            ("manifests", "cohort.txt"),
            ("stats.txt",),
            ("train", "checkpoint_final.spkp"),
            ("train", "checkpoint_final.meta"),
            ("embeddings", "embeddings.spkp"),
            ("score", "trials.txt"),
            ("score", "raw_scores.txt"),
            ("score", "scores.txt"),
            ("metrics.txt",),
            ("operating_points.txt",),
        ]:
            assert os.path.isfile(run.path(*rel)), rel

    def test_split_sizes(self, base):
        # 4 speakers x 5 utts, 2 held out: 12 train, 8 eval; perturbed copies
        # double the train side (factors 0.9 and 1.1), tripling the class set
        run, _, _ = base
        corpus = load_manifest(run.corpus_manifest)
        train = load_manifest(run.train_manifest)
        evalm = load_manifest(run.eval_manifest)
        cohort = load_manifest(run.cohort_manifest)
        assert len(corpus) == 20
        assert len(evalm) == 8
        assert len(cohort) == 12
        assert len(train) == 36
        assert len({e.speaker_id for e in train}) == 12
        assert {e.speaker_id for e in cohort} == {e.speaker_id for e in evalm}

    def test_perturbed_naming(self, base):
        run, _, _ = base
        perturbed = load_manifest(run.perturbed_manifest)
        assert len(perturbed) == 24
        for e in perturbed:
            assert re.fullmatch(r"s\d{3}_u\d{3}#sp(0\.9|1\.1)", e.utt_id)
            assert re.fullmatch(r"s\d{3}#sp(0\.9|1\.1)", e.speaker_id)
            assert os.path.isfile(e.path)

    def test_embeddings_cover_eval_and_cohort(self, base):
        run, _, _ = base
        embs = load_params(run.embeddings_file)
        want = {e.utt_id for e in load_manifest(run.eval_manifest)}
        want |= {e.utt_id for e in load_manifest(run.cohort_manifest)}
        assert set(embs) == want
        dims = {v.shape for v in embs.values()}
        assert dims == {(24,)}

    def test_metrics_file_machine_readable(self, base):
        run, _, _ = base
        text = open(run.metrics_file).read()
        values = dict(
            line.split("=", 1) for line in text.splitlines() if "=" in line and " " not in line
        )
        assert 0.0 <= float(values["eer"]) <= 1.0
        assert 0.0 <= float(values["mindcf"]) <= 1.0
        assert float(values["num_trials"]) == 40.0

    def test_score_files_parse(self, base):
        run, _, _ = base
        for name in ["raw_scores.txt", "scores.txt"]:
            lines = open(run.path("score", name)).read().splitlines()
            assert len(lines) == 40
            for line in lines:
                parts = line.split(" ")
                assert len(parts) == 4 and parts[0] in ("1", "0")
                float(parts[3])

    def test_lock_released(self, base):
        run, _, _ = base
        assert not os.path.exists(run.path(".lock"))


class TestRerunAndInvalidation:
    def test_rerun_skips_everything_and_touches_nothing(self, base):
        run, text, _ = base
        watched = [
            run.path("train", "checkpoint_final.spkp"),
            run.embeddings_file,
            run.scores_file,
            run.metrics_file,
        ]
        before = {p: (os.path.getmtime(p), open(p, "rb").read()) for p in watched}
        _, lines = run_logged(text)
        assert stage_actions(lines) == {s: "skip" for s in range(1, 9)}
        for p in watched:
            assert os.path.getmtime(p) == before[p][0]
            assert open(p, "rb").read() == before[p][1]

    def test_scoring_key_reruns_only_scoring_stages(self, base):
        run, text, _ = base
        ckpt_bytes = open(run.path("train", "checkpoint_final.spkp"), "rb").read()
        trials_before = open(run.trials_file).read()
        _, lines = run_logged(text + "scoring.trials_seed: 8\n")
        want = {s: "skip" for s in range(1, 7)}
        want.update({7: "done", 8: "done"})
        assert stage_actions(lines) == want
        assert open(run.path("train", "checkpoint_final.spkp"), "rb").read() == ckpt_bytes
        assert open(run.trials_file).read() != trials_before
        # put the directory back for the other tests
        _, lines = run_logged(text)
        assert stage_actions(lines)[7] == "done"

    def test_deleted_output_reruns_its_stage(self, base):
        run, text, _ = base
        os.unlink(run.metrics_file)
        _, lines = run_logged(text)
        actions = stage_actions(lines)
        assert actions[8] == "done"
        assert all(actions[s] == "skip" for s in range(1, 8))
        assert os.path.isfile(run.metrics_file)

    def test_edited_intermediate_reruns_its_stage_only(self, base):
        run, text, _ = base
        # hand-edit the score file: stage 7's output stamp no longer verifies,
        # so 7 runs again. It regenerates byte-identical scores, so stage 8's
        # recorded input hash still holds and 8 stays skipped.
        original = open(run.scores_file).read()
        lines_txt = original.splitlines()
        parts = lines_txt[0].split(" ")
        parts[3] = repr(float(parts[3]) + 1.0)
        lines_txt[0] = " ".join(parts)
        with open(run.scores_file, "w") as f:
            f.write("\n".join(lines_txt) + "\n")
        _, lines = run_logged(text)
        actions = stage_actions(lines)
        assert all(actions[s] == "skip" for s in range(1, 7))
        assert actions[7] == "done" and actions[8] == "skip"
        assert open(run.scores_file).read() == original

    def test_trainer_key_reruns_training_onward(self, tmp_path, tiny_config_text):
        text = tiny_config_text(str(tmp_path / "exp"))
        run_logged(text)
        _, lines = run_logged(text.replace("trainer.steps: 20", "trainer.steps: 22"))
        actions = stage_actions(lines)
        assert all(actions[s] == "skip" for s in range(1, 5))
        assert all(actions[s] == "done" for s in range(5, 9))


class TestDeterminism:
    def test_independent_runs_bit_identical(self, tmp_path, tiny_config_text):
        # two fresh experiment dirs, same settings: every learned artifact
        # agrees byte for byte (exp_dir is excluded from the config hash)
        runs = []
        for sub in ["a", "b"]:
            run, _ = run_logged(tiny_config_text(str(tmp_path / sub)))
            runs.append(run)
        a, b = runs
        for rel in [
            ("train", "checkpoint_final.spkp"),
            ("embeddings", "embeddings.spkp"),
            ("score", "scores.txt"),
            ("metrics.txt",),
        ]:
            assert open(a.path(*rel), "rb").read() == open(b.path(*rel), "rb").read(), rel


class TestPackagingStages:
    def test_package_and_register(self, base):
        run, _, _ = base
        assert os.path.isfile(run.path("packages", "model", "metadata.txt"))
        # defaults put the registry inside the experiment dir
        ex, pkg = load_by_name("model", Registry(run.path("registry")))
        assert pkg.name == "model"
        assert pkg.config_hash == run.cfg.config_hash()
        # the registered model reproduces the pipeline's own embeddings
        from spkforge.audio import load_waveform

        ref = load_params(run.embeddings_file)
        entry = list(load_manifest(run.eval_manifest))[0]
        np.testing.assert_array_equal(ex.extract(load_waveform(entry.path)), ref[entry.utt_id])

    def test_rerun_of_register_is_noop(self, base):
        _, text, _ = base
        _, lines = run_logged(text, 10, 10)
        assert stage_actions(lines) == {10: "skip"}

    def test_env_registry_override(self, monkeypatch, tmp_path, tiny_config_text):
        env_reg = tmp_path / "envreg"
        monkeypatch.setenv("SPKFORGE_REGISTRY", str(env_reg))
        run_logged(tiny_config_text(str(tmp_path / "exp")), 1, 10)
        assert os.path.isfile(env_reg / "model" / "metadata.txt")


class TestFailureModes:
    def test_lock_contention(self, tmp_path, tiny_config_text):
        exp = tmp_path / "exp"
        exp.mkdir()
        (exp / ".lock").write_text("12345\n")
        with pytest.raises(PipelineError, match="locked by another run"):
            run_pipeline(parse_config_text(tiny_config_text(str(exp))), 1, 1)

    @pytest.mark.parametrize("start,stop", [(0, 8), (1, 11), (5, 3)])
    def test_bad_stage_range(self, tmp_path, tiny_config_text, start, stop):
        with pytest.raises(PipelineError):
            run_pipeline(parse_config_text(tiny_config_text(str(tmp_path / "exp"))), start, stop)

    def test_stage_error_carries_stage_number(self, tmp_path, tiny_config_text):
        text = tiny_config_text(str(tmp_path / "exp"), corpus_dir=str(tmp_path / "missing"))
        with pytest.raises(StageError) as exc:
            run_pipeline(parse_config_text(text), 1, 1)
        assert exc.value.stage == 1
        assert not os.path.exists(tmp_path / "exp" / ".lock")

    def test_holdout_exhausts_speaker(self, tmp_path, tiny_config_text):
        text = tiny_config_text(str(tmp_path / "exp")).replace(
            "data.holdout_utts: 2", "data.holdout_utts: 5"
        )
        with pytest.raises(StageError) as exc:
            run_pipeline(parse_config_text(text), 1, 2)
        assert exc.value.stage == 2
        assert "need more than data.holdout_utts=5" in str(exc.value)
