"""Command-line entry points.

    spkforge run --config FILE [--stage N] [--stop-stage M]
    spkforge gen-corpus --out DIR [--speakers N] [--utts N] [--seconds S] [--seed K]
    spkforge trials --manifest FILE --out FILE [--num-target N] [--num-nontarget M] [--seed K]
    spkforge registry register PACKAGE_DIR | list | info NAME
    spkforge embed --model NAME --wav FILE

Exit code 0 on success; a failing pipeline stage exits with that stage's
number; any other failure exits 1. SPKFORGE_REGISTRY overrides the
registry location for every subcommand that touches it. `embed` writes
exactly one line to stdout: the embedding as space-separated floats with
six decimals.
"""

from __future__ import annotations

import argparse
import sys

from .errors import SpkforgeError, StageError


def _cmd_run(args):
    from .config import load_config
    from .pipeline import run_pipeline

    cfg = load_config(args.config)
    run_pipeline(cfg, args.stage, args.stop_stage, log=print)
    return 0


def _cmd_gen_corpus(args):
    from .synthcorpus import gen_synthetic_corpus

    manifest = gen_synthetic_corpus(
        args.speakers, args.utts, args.seconds, args.seed, args.out, sample_rate=args.sample_rate
    )
    print(f"wrote {len(manifest)} utterances under {args.out}", file=sys.stderr)
    return 0


def _cmd_trials(args):
    from .manifest import load_manifest
    from .trials import make_trials, save_trials

    entries = list(load_manifest(args.manifest))
    trials = make_trials(entries, args.num_target, args.num_nontarget, args.seed)
    save_trials(args.out, trials)
    print(f"wrote {len(trials)} trials to {args.out}", file=sys.stderr)
    return 0


def _registry(args):
    from .packaging import Registry, resolve_registry_dir

    return Registry(resolve_registry_dir(explicit=args.registry))


def _cmd_registry_register(args):
    from .packaging import load_package, register

    pkg = register(load_package(args.package), _registry(args))
    print(f"registered {pkg.name} ({pkg.content_hash[:12]})", file=sys.stderr)
    return 0


def _cmd_registry_list(args):
    from .packaging import list_models

    for name in list_models(_registry(args)):
        print(name)
    return 0


def _cmd_registry_info(args):
    from .packaging import model_info

    pkg = model_info(args.name, _registry(args))
    print(f"name: {pkg.name}")
    print(f"embed_dim: {pkg.embed_dim}")
    print(f"created: {pkg.created}")
    print(f"config_hash: {pkg.config_hash}")
    print(f"content_hash: {pkg.content_hash}")
    return 0


def _cmd_embed(args):
    from .audio import load_waveform
    from .packaging import load_by_name

    extractor, _ = load_by_name(args.model, _registry(args))
    emb = extractor.extract(load_waveform(args.wav))
    print(" ".join(f"{x:.6f}" for x in emb))
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(prog="spkforge", description="speaker embedding recipe toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute pipeline stages from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", type=int, default=1, help="first stage (default 1)")
    p.add_argument("--stop-stage", type=int, default=8, help="last stage (default 8)")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("gen-corpus", help="generate a synthetic training corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=12)
    p.add_argument("--utts", type=int, default=10)
    p.add_argument("--seconds", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=101)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.set_defaults(fn=_cmd_gen_corpus)

    p = sub.add_parser("trials", help="sample a trial list from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-target", type=int, default=200)
    p.add_argument("--num-nontarget", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=_cmd_trials)

    p = sub.add_parser("registry", help="manage the local model registry")
    p.add_argument("--registry", default="", help="registry directory (default: SPKFORGE_REGISTRY or ~/.spkforge/registry)")
    rsub = p.add_subparsers(dest="registry_command", required=True)
    q = rsub.add_parser("register", help="copy a sealed package into the registry")
    q.add_argument("package")
    q.set_defaults(fn=_cmd_registry_register)
    q = rsub.add_parser("list", help="list registered model names")
    q.set_defaults(fn=_cmd_registry_list)
    q = rsub.add_parser("info", help="show a registered model's metadata")
    q.add_argument("name")
    q.set_defaults(fn=_cmd_registry_info)

    p = sub.add_parser("embed", help="embed one wav with a registered model")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--registry", default="", help="registry directory (default: SPKFORGE_REGISTRY or ~/.spkforge/registry)")
    p.set_defaults(fn=_cmd_embed)

    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageError as e:
        print(f"spkforge: {e}", file=sys.stderr)
        return e.stage
    except SpkforgeError as e:
        print(f"spkforge: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
