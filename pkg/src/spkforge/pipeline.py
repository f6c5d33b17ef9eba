"""The staged recipe runner.

Stages: 1 prepare data, 2 speed perturb, 3 format manifests, 4 stats,
5 train, 6 extract embeddings, 7 score (+ optional AS-norm / QMF),
8 metrics, 9 package, 10 register.

Each stage records a stamp file holding a fingerprint of the config
sections it depends on plus content hashes of every file it read and
wrote. A stage is skipped when its stamp still verifies, so reruns of a
finished range touch nothing, and editing any upstream file or relevant
config key re-runs exactly the stages downstream of the change. One run
owns the experiment directory via a lock file.

Layout under data.exp_dir:

    corpus/            generated wavs (stage 1, when no corpus_dir given)
    perturbed/         speed-perturbed training copies (stage 2)
    manifests/         corpus / perturbed / train / eval / cohort lists
    stats.txt          dataset statistics (stage 4)
    train/             checkpoints (stage 5)
    embeddings/        eval + cohort embeddings, one SPKP file (stage 6)
    score/             trials and score files (stage 7)
    metrics.txt        EER / minDCF report (stage 8)
    packages/          sealed model package (stage 9)
    registry/          default registry location (stage 10)
    stamps/            stage stamps
"""

from __future__ import annotations

import hashlib
import os
import shutil

import numpy as np

from .audio import PerturbLabelRule, load_waveform, relabel_speaker, save_waveform, speed_perturb
from .errors import PipelineError, SpkforgeError, StageError
from .manifest import Manifest, ManifestEntry, compute_stats, load_manifest, save_manifest
from .metrics import eer, metric_report, min_dcf, operating_points
from .packaging import Registry, list_models, load_package, package_model, register, resolve_registry_dir
from .scoring import AsNormConfig, as_norm, fit_qmf, qmf_apply, qmf_features, score_trials
from .synthcorpus import gen_synthetic_corpus
from .trials import load_trials, make_trials, save_trials
from .trainer import load_checkpoint, train
from .container import load_params, save_params

FIRST_STAGE, LAST_STAGE = 1, 10

STAGE_NAMES = {
    1: "prepare",
    2: "perturb",
    3: "manifests",
    4: "stats",
    5: "train",
    6: "extract",
    7: "score",
    8: "metrics",
    9: "package",
    10: "register",
}

# Config sections whose values feed each stage; anything else may change
# without invalidating the stage's stamp.
_MODEL_SECTIONS = ("data", "frontend", "extractor", "loss", "trainer")
_STAGE_SECTIONS = {
    1: ("data",),
    2: ("data",),
    3: ("data",),
    4: ("data",),
    5: _MODEL_SECTIONS,
    6: _MODEL_SECTIONS,
    7: _MODEL_SECTIONS + ("scoring",),
    8: _MODEL_SECTIONS + ("scoring",),
    9: _MODEL_SECTIONS + ("registry",),
    10: _MODEL_SECTIONS + ("registry",),
}


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Paths and config for one pipeline invocation."""

    def __init__(self, cfg, log=None):
        self.cfg = cfg
        self.exp = os.path.abspath(cfg.get("data", "exp_dir"))
        self.log = log or (lambda msg: None)

    def path(self, *parts):
        return os.path.join(self.exp, *parts)

    # canonical artifact locations
    @property
    def corpus_manifest(self):
        return self.path("manifests", "corpus.txt")

    @property
    def perturbed_manifest(self):
        return self.path("manifests", "perturbed.txt")

    @property
    def train_manifest(self):
        return self.path("manifests", "train.txt")

    @property
    def eval_manifest(self):
        return self.path("manifests", "eval.txt")

    @property
    def cohort_manifest(self):
        return self.path("manifests", "cohort.txt")

    @property
    def ckpt_prefix(self):
        return self.path("train", "checkpoint_final")

    @property
    def embeddings_file(self):
        return self.path("embeddings", "embeddings.spkp")

    @property
    def trials_file(self):
        return self.path("score", "trials.txt")

    @property
    def raw_scores_file(self):
        return self.path("score", "raw_scores.txt")

    @property
    def scores_file(self):
        return self.path("score", "scores.txt")

    @property
    def metrics_file(self):
        return self.path("metrics.txt")

    @property
    def package_dir(self):
        return self.path("packages", self.cfg.get("registry", "model_name"))

    @property
    def registry_dir(self):
        return resolve_registry_dir(
            explicit=self.cfg.get("registry", "dir"), fallback=self.path("registry")
        )

    def holdout_split(self, entries):
        """(train, holdout) split: last holdout_utts per speaker by utt_id."""
        k = self.cfg.get("data", "holdout_utts")
        if k < 1:
            raise SpkforgeError(f"data.holdout_utts must be >= 1, got {k}")
        by_spk = {}
        for e in sorted(entries, key=lambda e: e.utt_id):
            by_spk.setdefault(e.speaker_id, []).append(e)
        train, held = [], []
        for spk in sorted(by_spk):
            utts = by_spk[spk]
            if len(utts) <= k:
                raise SpkforgeError(
                    f"speaker {spk} has {len(utts)} utterances; "
                    f"need more than data.holdout_utts={k} to keep a training split"
                )
            train.extend(utts[:-k])
            held.extend(utts[-k:])
        return train, held


# -- stage bodies -------------------------------------------------------------
# Each stage defines inputs(run) / outputs(run) as file-path lists (used for
# the stamp) and execute(run). Output paths must be computable before the
# stage runs so stale results can be cleared.


def _manifest_paths(manifest_file):
    return [e.path for e in load_manifest(manifest_file)]


def _stage1_inputs(run):
    corpus_dir = run.cfg.get("data", "corpus_dir")
    if not corpus_dir:
        return []
    src = os.path.join(corpus_dir, "manifest.txt")
    return [src] + _manifest_paths(src)


def _stage1_outputs(run):
    out = [run.corpus_manifest]
    if not run.cfg.get("data", "corpus_dir"):
        g = run.cfg.get
        for i in range(g("data", "num_speakers")):
            spk = f"s{i:03d}"
            for j in range(g("data", "utts_per_speaker")):
                out.append(run.path("corpus", "wav", spk, f"{spk}_u{j:03d}.wav"))
        out.append(run.path("corpus", "manifest.txt"))
    return out


def _stage1_clear(run):
    if not run.cfg.get("data", "corpus_dir"):
        shutil.rmtree(run.path("corpus"), ignore_errors=True)


def _stage1_execute(run):
    g = run.cfg.get
    corpus_dir = g("data", "corpus_dir")
    if corpus_dir:
        manifest = load_manifest(os.path.join(corpus_dir, "manifest.txt"))
        entries = [
            ManifestEntry(
                e.utt_id,
                e.speaker_id,
                os.path.abspath(os.path.join(corpus_dir, e.path)),
                e.duration_seconds,
            )
            for e in manifest
        ]
        manifest = Manifest(entries)
    else:
        run.log(f"stage 1: generating synthetic corpus under {run.path('corpus')}")
        manifest = gen_synthetic_corpus(
            g("data", "num_speakers"),
            g("data", "utts_per_speaker"),
            g("data", "seconds_per_utt"),
            g("data", "corpus_seed"),
            run.path("corpus"),
        )
    os.makedirs(run.path("manifests"), exist_ok=True)
    save_manifest(run.corpus_manifest, manifest)


def _perturb_plan(run):
    """(entry, factor, out_wav) for every perturbed training copy."""
    factors = run.cfg.get("data", "perturb_factors")
    train, _ = run.holdout_split(list(load_manifest(run.corpus_manifest)))
    plan = []
    for factor in factors:
        if abs(factor - 1.0) < 1e-12:
            continue
        for e in train:
            wav = run.path("perturbed", "wav", e.speaker_id, f"{e.utt_id}#sp{factor:g}.wav")
            plan.append((e, factor, wav))
    return plan


def _stage2_inputs(run):
    train, _ = run.holdout_split(list(load_manifest(run.corpus_manifest)))
    return [run.corpus_manifest] + [e.path for e in train]


def _stage2_outputs(run):
    return [run.perturbed_manifest] + [wav for _, _, wav in _perturb_plan(run)]


def _stage2_clear(run):
    shutil.rmtree(run.path("perturbed"), ignore_errors=True)


def _stage2_execute(run):
    factors = tuple(run.cfg.get("data", "perturb_factors"))
    rule = PerturbLabelRule(factors=list(factors))
    plan = _perturb_plan(run)
    run.log(f"stage 2: writing {len(plan)} perturbed copies (factors {factors})")
    entries = []
    for e, factor, wav in plan:
        out = speed_perturb(load_waveform(e.path), factor)
        os.makedirs(os.path.dirname(wav), exist_ok=True)
        save_waveform(wav, out)
        entries.append(
            ManifestEntry(
                f"{e.utt_id}#sp{factor:g}",
                relabel_speaker(e.speaker_id, factor, rule),
                os.path.abspath(wav),
                out.duration_seconds,
            )
        )
    entries.sort(key=lambda e: e.utt_id)
    save_manifest(run.perturbed_manifest, Manifest(entries))


def _stage3_inputs(run):
    return [run.corpus_manifest, run.perturbed_manifest]


def _stage3_outputs(run):
    return [run.train_manifest, run.eval_manifest, run.cohort_manifest]


def _stage3_execute(run):
    corpus = list(load_manifest(run.corpus_manifest))
    perturbed = list(load_manifest(run.perturbed_manifest))
    train_base, held = run.holdout_split(corpus)
    train_all = sorted(train_base + perturbed, key=lambda e: e.utt_id)
    save_manifest(run.train_manifest, Manifest(train_all))
    save_manifest(run.eval_manifest, Manifest(sorted(held, key=lambda e: e.utt_id)))
    save_manifest(run.cohort_manifest, Manifest(sorted(train_base, key=lambda e: e.utt_id)))
    run.log(
        f"stage 3: train {len(train_all)} utts "
        f"({len({e.speaker_id for e in train_all})} classes), eval {len(held)} utts"
    )


def _stage4_inputs(run):
    return [run.train_manifest]


def _stage4_outputs(run):
    return [run.path("stats.txt")]


def _stage4_execute(run):
    stats = compute_stats(load_manifest(run.train_manifest))
    lines = [
        f"num_utts: {stats.num_utts}",
        f"num_speakers: {stats.num_speakers}",
        f"total_hours: {stats.total_hours:.6f}",
    ]
    for spk in sorted(stats.per_speaker):
        lines.append(f"speaker {spk}: {stats.per_speaker[spk]}")
    with open(run.path("stats.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    run.log(f"stage 4: {stats.num_utts} utts / {stats.num_speakers} speakers / {stats.total_hours:.3f} h")


def _stage5_inputs(run):
    return [run.train_manifest] + _manifest_paths(run.train_manifest)


def _stage5_outputs(run):
    tcfg = run.cfg.get("trainer", "steps"), run.cfg.get("trainer", "checkpoint_every")
    steps, every = tcfg
    out = []
    for s in range(every, steps, every):
        out.append(run.path("train", f"checkpoint_{s:06d}.spkp"))
        out.append(run.path("train", f"checkpoint_{s:06d}.meta"))
    out.append(run.ckpt_prefix + ".spkp")
    out.append(run.ckpt_prefix + ".meta")
    return out


def _stage5_clear(run):
    shutil.rmtree(run.path("train"), ignore_errors=True)


def _stage5_execute(run):
    manifest = load_manifest(run.train_manifest)
    tc = run.cfg.to_train_config()
    os.makedirs(run.path("train"), exist_ok=True)
    train(
        tc,
        manifest,
        out_dir=run.path("train"),
        config_hash=run.cfg.config_hash(),
        log=lambda msg: run.log(f"stage 5: {msg}"),
    )


def _stage6_inputs(run):
    ins = [
        run.ckpt_prefix + ".spkp",
        run.ckpt_prefix + ".meta",
        run.eval_manifest,
        run.cohort_manifest,
    ]
    ins += _manifest_paths(run.eval_manifest)
    ins += _manifest_paths(run.cohort_manifest)
    return ins


def _stage6_outputs(run):
    return [run.embeddings_file]


def _stage6_execute(run):
    from .trainer import checkpoint_extractor

    ckpt = load_checkpoint(run.ckpt_prefix)
    ex = checkpoint_extractor(ckpt, run.cfg.to_extractor_config())
    todo = {}
    for mf in (run.eval_manifest, run.cohort_manifest):
        for e in load_manifest(mf):
            todo[e.utt_id] = e.path
    run.log(f"stage 6: extracting {len(todo)} embeddings")
    # one utterance per forward pass so every consumer of the model sees
    # identical BLAS shapes, keeping re-extraction bit-identical
    embs = {u: ex.extract(load_waveform(todo[u])) for u in sorted(todo)}
    os.makedirs(run.path("embeddings"), exist_ok=True)
    save_params(run.embeddings_file, embs)


def _stage7_inputs(run):
    ins = [run.embeddings_file, run.eval_manifest, run.cohort_manifest]
    preset = run.cfg.get("scoring", "trials_file")
    if preset:
        ins.append(preset)
    return ins


def _stage7_outputs(run):
    out = [run.trials_file, run.raw_scores_file, run.scores_file]
    if run.cfg.get("scoring", "qmf"):
        out.append(run.path("score", "qmf_model.txt"))
    return out


def _stage7_clear(run):
    shutil.rmtree(run.path("score"), ignore_errors=True)


def _write_scores(path, trials, scores):
    from .trials import _LABEL_TO_FIELD

    with open(path, "w", encoding="utf-8") as f:
        for t, s in zip(trials, scores):
            f.write(f"{_LABEL_TO_FIELD[t.label]} {t.enroll} {t.test} {float(s)!r}\n")


def _stage7_execute(run):
    g = run.cfg.get
    embs = load_params(run.embeddings_file)
    eval_entries = list(load_manifest(run.eval_manifest))
    preset = g("scoring", "trials_file")
    if preset:
        trials = load_trials(preset)
    else:
        trials = make_trials(
            eval_entries, g("scoring", "num_target"), g("scoring", "num_nontarget"),
            g("scoring", "trials_seed"),
        )
    os.makedirs(run.path("score"), exist_ok=True)
    save_trials(run.trials_file, trials)

    raw = score_trials(embs, trials)
    _write_scores(run.raw_scores_file, trials, raw)
    scores = raw

    use_asnorm, use_qmf = g("scoring", "as_norm"), g("scoring", "qmf")
    cohort = None
    an_cfg = run.cfg.to_asnorm_config()
    if use_asnorm or use_qmf:
        cohort_ids = sorted(e.utt_id for e in load_manifest(run.cohort_manifest))
        cohort = np.stack([embs[u] for u in cohort_ids])
    if use_asnorm:
        scores = as_norm(scores, trials, embs, cohort, an_cfg)
        run.log(f"stage 7: applied adaptive score normalization (topN {an_cfg.topn})")
    if use_qmf:
        durations = {e.utt_id: e.duration_seconds for e in eval_entries}
        calib = make_trials(
            eval_entries, g("scoring", "num_target"), g("scoring", "num_nontarget"),
            g("scoring", "trials_seed") + 1,
        )
        calib_scores = score_trials(embs, calib)
        if use_asnorm:
            calib_scores = as_norm(calib_scores, calib, embs, cohort, an_cfg)
        feats = qmf_features(calib, calib_scores, embs, durations, cohort, topn=an_cfg.topn)
        labels = np.array([1 if t.label == "target" else 0 for t in calib])
        model = fit_qmf(feats, labels)
        with open(run.path("score", "qmf_model.txt"), "w", encoding="utf-8") as f:
            for name, w in zip(model.feature_names, model.weights):
                f.write(f"{name}: {w!r}\n")
            f.write(f"bias: {model.bias!r}\n")
        eval_feats = qmf_features(trials, scores, embs, durations, cohort, topn=an_cfg.topn)
        scores = qmf_apply(model, eval_feats)
        run.log("stage 7: applied quality-aware calibration")

    _write_scores(run.scores_file, trials, scores)
    run.log(f"stage 7: scored {len(trials)} trials")


def _read_scores(path):
    from .trials import _FIELD_TO_LABEL

    labels, scores = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4 or parts[0] not in _FIELD_TO_LABEL:
                raise SpkforgeError(f"{path}:{lineno}: expected 'label enroll test score'")
            labels.append(_FIELD_TO_LABEL[parts[0]])
            scores.append(float(parts[3]))
    return np.array(scores), np.array(labels)


def _stage8_inputs(run):
    return [run.scores_file]


def _stage8_outputs(run):
    return [run.metrics_file, run.path("operating_points.txt")]


def _stage8_execute(run):
    scores, labels = _read_scores(run.scores_file)
    binary = np.array([1 if l == "target" else 0 for l in labels])
    values = {
        "eer": eer(scores, binary),
        "mindcf": min_dcf(scores, binary),
        "num_trials": float(len(scores)),
        "num_target": float(int(binary.sum())),
        "num_nontarget": float(int((1 - binary).sum())),
    }
    if (labels == "spoof").any():
        from .metrics import sasv_eer

        values["sasv_eer"] = sasv_eer(scores, labels)
    report = metric_report(values)
    with open(run.metrics_file, "w", encoding="utf-8") as f:
        f.write(report)
    ops = operating_points(scores, binary)
    with open(run.path("operating_points.txt"), "w", encoding="utf-8") as f:
        f.write("threshold far frr\n")
        for th, far, frr in ops:
            f.write(f"{th!r} {far!r} {frr!r}\n")
    run.log(f"stage 8: eer {values['eer']:.4f} mindcf {values['mindcf']:.4f}")


def _stage9_inputs(run):
    return [run.ckpt_prefix + ".spkp", run.ckpt_prefix + ".meta"]


def _stage9_outputs(run):
    d = run.package_dir
    return [os.path.join(d, n) for n in ("config.cfg", "params.spkp", "metadata.txt")]


def _stage9_clear(run):
    shutil.rmtree(run.package_dir, ignore_errors=True)


def _stage9_execute(run):
    ckpt = load_checkpoint(run.ckpt_prefix)
    name = run.cfg.get("registry", "model_name")
    pkg = package_model(ckpt, run.cfg, name, run.path("packages"))
    run.log(f"stage 9: sealed package {pkg.name} ({pkg.content_hash[:12]})")


def _stage10_inputs(run):
    return _stage9_outputs(run)


def _stage10_outputs(run):
    name = run.cfg.get("registry", "model_name")
    d = os.path.join(run.registry_dir, name)
    return [os.path.join(d, n) for n in ("config.cfg", "params.spkp", "metadata.txt")]


def _stage10_execute(run):
    name = run.cfg.get("registry", "model_name")
    registry = Registry(run.registry_dir)
    pkg = load_package(run.package_dir)
    dest = os.path.join(registry.root, name)
    if os.path.isdir(dest):
        if load_package(dest).content_hash == pkg.content_hash:
            run.log(f"stage 10: {name} already registered with identical content")
            return
        shutil.rmtree(dest)  # stale registration from an earlier run of this experiment
    register(pkg, registry)
    run.log(f"stage 10: registered {name} in {registry.root} (models: {', '.join(list_models(registry))})")


_STAGES = {
    1: (_stage1_inputs, _stage1_outputs, _stage1_execute, _stage1_clear),
    2: (_stage2_inputs, _stage2_outputs, _stage2_execute, _stage2_clear),
    3: (_stage3_inputs, _stage3_outputs, _stage3_execute, None),
    4: (_stage4_inputs, _stage4_outputs, _stage4_execute, None),
    5: (_stage5_inputs, _stage5_outputs, _stage5_execute, _stage5_clear),
    6: (_stage6_inputs, _stage6_outputs, _stage6_execute, None),
    7: (_stage7_inputs, _stage7_outputs, _stage7_execute, _stage7_clear),
    8: (_stage8_inputs, _stage8_outputs, _stage8_execute, None),
    9: (_stage9_inputs, _stage9_outputs, _stage9_execute, _stage9_clear),
    10: (_stage10_inputs, _stage10_outputs, _stage10_execute, None),
}


# -- stamps -------------------------------------------------------------------


def _stamp_path(run, stage):
    return run.path("stamps", f"stage{stage:02d}.stamp")


def _stage_fingerprint(run, stage):
    return run.cfg.hash_sections(_STAGE_SECTIONS[stage])


def _hash_entries(paths):
    return [(p, _sha256_file(p)) for p in paths]


def _write_stamp(run, stage, inputs, outputs):
    os.makedirs(run.path("stamps"), exist_ok=True)
    lines = [f"config {_stage_fingerprint(run, stage)}"]
    for tag, entries in (("input", inputs), ("output", outputs)):
        for path, digest in entries:
            lines.append(f"{tag} {digest} {path}")
    with open(_stamp_path(run, stage), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _stamp_fresh(run, stage):
    """True when the stage's stamp exists and everything it recorded
    (config sections, input files, output files) hashes the same now."""
    path = _stamp_path(run, stage)
    if not os.path.isfile(path):
        return False
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip("\n").split(" ", 2)
            if parts and parts[0]:
                entries.append(parts)
    if not entries or entries[0][0] != "config" or len(entries[0]) < 2:
        return False
    if entries[0][1] != _stage_fingerprint(run, stage):
        return False
    for parts in entries[1:]:
        if len(parts) != 3 or parts[0] not in ("input", "output"):
            return False
        _, digest, file_path = parts
        if not os.path.isfile(file_path) or _sha256_file(file_path) != digest:
            return False
    return True


# -- runner -------------------------------------------------------------------


class _Lock:
    def __init__(self, exp_dir):
        self.path = os.path.join(exp_dir, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PipelineError(
                f"experiment dir is locked by another run ({self.path}); "
                "remove the file if that run is gone"
            ) from None
        os.write(fd, f"{os.getpid()}\n".encode("ascii"))
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def run_pipeline(cfg, start_stage=1, stop_stage=8, log=None):
    """Execute stages start..stop; raises StageError on the first failure."""
    if not (FIRST_STAGE <= start_stage <= LAST_STAGE) or not (FIRST_STAGE <= stop_stage <= LAST_STAGE):
        raise PipelineError(f"stages must lie in {FIRST_STAGE}..{LAST_STAGE}, got {start_stage}..{stop_stage}")
    if start_stage > stop_stage:
        raise PipelineError(f"start stage {start_stage} is after stop stage {stop_stage}")
    run = _Run(cfg, log=log)
    os.makedirs(run.exp, exist_ok=True)
    with _Lock(run.exp):
        for stage in range(start_stage, stop_stage + 1):
            name = STAGE_NAMES[stage]
            inputs_fn, outputs_fn, execute, clear = _STAGES[stage]
            try:
                if _stamp_fresh(run, stage):
                    run.log(f"stage {stage} ({name}): up to date, skipping")
                    continue
                if clear is not None:
                    clear(run)
                else:
                    for p in outputs_fn(run):
                        if os.path.exists(p):
                            os.unlink(p)
                ins = _hash_entries(inputs_fn(run))
                execute(run)
                outs = _hash_entries(outputs_fn(run))
                _write_stamp(run, stage, ins, outs)
                run.log(f"stage {stage} ({name}): done")
            except StageError:
                raise
            except (SpkforgeError, OSError, ValueError) as e:
                raise StageError(stage, f"{name}: {e}") from e
    return run
