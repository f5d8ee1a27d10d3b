"""Command-line pipeline: synth / delexicalize / pair / train / augment /
eval-diversity / ab-test, plus a `pipeline` subcommand chaining them all.

Every subcommand validates its inputs, writes outputs atomically, records a
provenance sidecar (`<artifact>.meta.json` with the seeds and a config hash),
and exits with 0 on success, 1 on usage errors, 2 on validation errors and 3
on runtime errors, printing a single machine-parsable `error:<category>:`
line to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from . import augment as aug
from . import corpus as corpus_mod
from . import diversity as div
from . import pairing as pairing_mod
from . import synth as synth_mod
from . import tagger as tagger_mod
from .errors import ClusterAugError, ParseError, TrainingError, ValidationError
from .model import C2CConfig, Cluster2Cluster, fold_config, train_model
from .nnkernel import KernelError
from .util import atomic_write_json, atomic_write_text, config_hash, read_json, stable_seed


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")
    return path


def _basename(path) -> str | None:
    return os.path.basename(path) if path else path


def _write_meta(artifact_path: str, command: str, seeds: dict, config: dict) -> None:
    atomic_write_json(
        artifact_path + ".meta.json",
        {
            "command": command,
            "seeds": seeds,
            "config_sha256": config_hash(config),
            "tool_version": __version__,
        },
    )


def _c2c_config_from_args(args) -> C2CConfig:
    if getattr(args, "config", None):
        config = C2CConfig.from_dict(read_json(_require_file(args.config)))
    else:
        config = C2CConfig()
    overrides = {
        "layers": args.layers,
        "d_model": args.d_model,
        "n_heads": args.n_heads,
        "d_ff": args.d_ff,
        "t_max": args.t_max,
        "max_ranks": args.max_ranks,
        "dup_attention_weight": args.dup_attention_weight,
        "diversity_reg_weight": args.diversity_reg_weight,
        "learning_rate": args.learning_rate,
        "train_steps": args.train_steps,
        "batch_size": args.batch_size,
        "seed": args.seed,
    }
    data = config.to_dict()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return C2CConfig.from_dict(data)


def _add_c2c_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with model/trainer settings")
    parser.add_argument("--layers", type=int)
    parser.add_argument("--d-model", dest="d_model", type=int)
    parser.add_argument("--n-heads", dest="n_heads", type=int)
    parser.add_argument("--d-ff", dest="d_ff", type=int)
    parser.add_argument("--t-max", dest="t_max", type=int)
    parser.add_argument("--max-ranks", dest="max_ranks", type=int)
    parser.add_argument("--dup-attention-weight", type=float)
    parser.add_argument("--diversity-reg-weight", type=float)
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--train-steps", type=int)
    parser.add_argument("--batch-size", type=int)


# ----- subcommand implementations -------------------------------------------


def cmd_synth(args) -> int:
    grammar = synth_mod.Grammar.from_file(_require_file(args.grammar))
    os.makedirs(args.out_dir, exist_ok=True)
    seeds = {
        "train": stable_seed(args.seed, "synth", "train"),
        "test": stable_seed(args.seed, "synth", "test"),
    }
    config = {"grammar": _basename(args.grammar), "n_train": args.n_train, "n_test": args.n_test}
    for split, n, seed in (("train", args.n_train, seeds["train"]), ("test", args.n_test, seeds["test"])):
        path = os.path.join(args.out_dir, f"{split}.conll")
        corpus_mod.write_corpus(synth_mod.generate_corpus(grammar, n, seed), path)
        _write_meta(path, "synth", seeds, config)
        print(f"wrote {path} ({n} utterances)")
    return 0


def cmd_delexicalize(args) -> int:
    corpus = corpus_mod.read_corpus(_require_file(args.corpus))
    if not corpus:
        raise ValidationError(f"{args.corpus}: corpus is empty")
    delex = [corpus_mod.delexicalize(inst) for inst in corpus]
    lexicon = corpus_mod.build_lexicon(corpus)
    corpus_mod.write_delex(delex, args.out_delex)
    atomic_write_text(args.out_lexicon, lexicon.to_json())
    config = {"corpus": _basename(args.corpus)}
    _write_meta(args.out_delex, "delexicalize", {}, config)
    _write_meta(args.out_lexicon, "delexicalize", {}, config)
    print(f"wrote {args.out_delex} ({len(delex)} utterances), {args.out_lexicon}")
    return 0


def cmd_pair(args) -> int:
    delex = corpus_mod.read_delex(_require_file(args.delex))
    if not delex:
        raise ValidationError(f"{args.delex}: no utterances")
    groups = corpus_mod.group_by_frame(delex)
    pairs, summary = pairing_mod.dispersed_cluster_pairing(
        groups, args.m_in, args.m_out, args.seed, k_override=args.k_override
    )
    if not pairs:
        raise ValidationError("no cluster pairs produced; corpus frames are too small")
    folds = pairing_mod.assign_folds(len(pairs), args.k_folds, stable_seed(args.seed, "folds"))
    config = {
        "m_in": args.m_in,
        "m_out": args.m_out,
        "k_folds": args.k_folds,
        "k_override": args.k_override,
    }
    seeds = {"pairing": args.seed}
    atomic_write_json(args.out_pairs, pairing_mod.pairs_to_obj(pairs))
    _write_meta(args.out_pairs, "pair", seeds, config)
    atomic_write_json(args.out_folds, folds.to_dict())
    _write_meta(args.out_folds, "pair", seeds, config)
    if args.out_summary:
        atomic_write_json(args.out_summary, summary.to_dict())
        _write_meta(args.out_summary, "pair", seeds, config)
    print(
        f"wrote {args.out_pairs} ({summary.pairs_emitted} pairs from "
        f"{summary.frames_paired}/{summary.frames_total} frames; "
        f"{summary.frames_skipped} skipped), {args.out_folds}"
    )
    return 0


def _load_pairs_and_folds(pairs_path, folds_path):
    pairs = pairing_mod.pairs_from_obj(read_json(_require_file(pairs_path)))
    folds = pairing_mod.FoldAssignment.from_dict(read_json(_require_file(folds_path)))
    if folds.n_pairs != len(pairs):
        raise ValidationError(
            f"fold file covers {folds.n_pairs} pairs but pairs file has {len(pairs)}"
        )
    return pairs, folds


def cmd_train(args) -> int:
    pairs, folds = _load_pairs_and_folds(args.pairs, args.folds)
    if not 0 <= args.fold < len(folds.folds):
        raise UsageError(f"--fold {args.fold} out of range (have {len(folds.folds)} folds)")
    config = _c2c_config_from_args(args)
    vocab = aug.vocab_for_pairs(pairs, config.max_ranks)
    train_ids = folds.train_ids(args.fold)
    if not train_ids:
        raise ValidationError(f"fold {args.fold} has an empty training set")
    model, trace = train_model(
        fold_config(config, args.fold),
        vocab,
        [pairs[i] for i in train_ids],
        report_every=args.report_every,
        log=print,
    )
    model.save(args.out)
    _write_meta(
        args.out, "train", {"model": config.seed},
        {"config": config.to_dict(), "fold": args.fold},
    )
    final = trace[-1]
    print(
        f"wrote {args.out} (fold {args.fold}, {len(train_ids)} pairs, "
        f"final loss {final.total:.4f})"
    )
    return 0


def cmd_augment(args) -> int:
    pairs, folds = _load_pairs_and_folds(args.pairs, args.folds)
    with open(_require_file(args.lexicon), encoding="utf-8") as handle:
        lexicon = corpus_mod.SlotLexicon.from_json(handle.read())
    config = _c2c_config_from_args(args)
    models = {}
    if args.checkpoints:
        paths = args.checkpoints.split(",")
        if len(paths) != len(folds.folds):
            raise UsageError(
                f"--checkpoints lists {len(paths)} files but there are {len(folds.folds)} folds"
            )
        models = {i: Cluster2Cluster.load(_require_file(p)) for i, p in enumerate(paths)}
    generated, _ = aug.cross_expand(
        pairs,
        folds,
        config,
        m_out=args.m_out,
        mode=args.mode,
        temperature=args.temperature,
        models=models or None,
        log=print if args.verbose else None,
    )
    training_delex = None
    if args.training_delex:
        training_delex = corpus_mod.read_delex(_require_file(args.training_delex))
    refill_seed = stable_seed(config.seed, "refill")
    instances, sidecar, report = aug.emit_augmented_corpus(
        generated,
        lexicon,
        refill_seed,
        filter_empty_slots=args.filter_empty_slots,
        drop_training_duplicates=args.drop_training_duplicates,
        training_delex=training_delex,
    )
    seeds = {"model": config.seed, "refill": refill_seed}
    conf_dict = {"config": config.to_dict(), "m_out": args.m_out, "mode": args.mode}
    corpus_mod.write_corpus(instances, args.out_corpus)
    _write_meta(args.out_corpus, "augment", seeds, conf_dict)
    corpus_mod.write_delex(
        [out.tokens for cluster in generated for out in cluster.outputs], args.out_delex
    )
    _write_meta(args.out_delex, "augment", seeds, conf_dict)
    atomic_write_json(args.out_sidecar, sidecar)
    _write_meta(args.out_sidecar, "augment", seeds, conf_dict)
    atomic_write_json(args.out_skips, report.to_dict())
    _write_meta(args.out_skips, "augment", seeds, conf_dict)
    print(
        f"wrote {args.out_corpus} ({report.emitted} instances, "
        f"{report.flagged_mismatch} frame-mismatch, "
        f"{report.skipped_no_slots + report.skipped_unknown_slot + report.skipped_empty} skipped)"
    )
    return 0


def cmd_eval_diversity(args) -> int:
    if args.lexicalized:
        generated = [inst.tokens for inst in corpus_mod.read_corpus(_require_file(args.generated))]
        training = [inst.tokens for inst in corpus_mod.read_corpus(_require_file(args.training))]
    else:
        generated = corpus_mod.read_delex(_require_file(args.generated))
        training = corpus_mod.read_delex(_require_file(args.training))
    if not generated or not training:
        raise ValidationError("generated and training inputs must both be non-empty")
    report = div.diversity_report(generated, training)
    config = {
        "lexicalized": args.lexicalized,
        "generated": _basename(args.generated),
        "training": _basename(args.training),
    }
    atomic_write_json(args.out_report, report.to_dict())
    _write_meta(args.out_report, "eval-diversity", {}, config)
    atomic_write_text(args.out_histogram, report.histogram_tsv())
    _write_meta(args.out_histogram, "eval-diversity", {}, config)
    print(
        f"wrote {args.out_report}: inter_ratio={report.inter_ratio:.3f} "
        f"inter_med_mean={report.inter_med_mean:.3f} intra_ratio={report.intra_ratio:.3f} "
        f"intra_med_mean={report.intra_med_mean:.3f}"
    )
    return 0


def _tagger_config_from_args(args) -> tagger_mod.TaggerConfig:
    if getattr(args, "tagger_config", None):
        config = tagger_mod.TaggerConfig.from_dict(read_json(_require_file(args.tagger_config)))
    else:
        config = tagger_mod.TaggerConfig()
    if args.tagger_steps is not None:
        config.train_steps = args.tagger_steps
    return config


def cmd_ab_test(args) -> int:
    seed_corpus = corpus_mod.read_corpus(_require_file(args.train))
    augmented = corpus_mod.read_corpus(_require_file(args.augmented)) if args.augmented else []
    test_corpus = corpus_mod.read_corpus(_require_file(args.test))
    if not seed_corpus or not test_corpus:
        raise ValidationError("train and test corpora must be non-empty")
    config = _tagger_config_from_args(args)
    report = tagger_mod.ab_experiment(
        seed_corpus,
        augmented,
        test_corpus,
        config,
        n_seeds=args.n_seeds,
        base_seed=args.seed,
        log=print if args.verbose else None,
    )
    conf_dict = {"tagger": config.to_dict(), "n_seeds": args.n_seeds}
    atomic_write_json(args.out, report)
    _write_meta(args.out, "ab-test", {"base": args.seed, "runs": report["seeds"]}, conf_dict)
    if args.out_tsv:
        lines = ["condition\trun\tf1"]
        for name in ("baseline", "augmented"):
            for i, f1 in enumerate(report[name]["per_seed_f1"]):
                lines.append(f"{name}\t{i}\t{f1:.4f}")
        atomic_write_text(args.out_tsv, "\n".join(lines) + "\n")
        _write_meta(args.out_tsv, "ab-test", {"base": args.seed}, conf_dict)
    print(
        f"wrote {args.out}: baseline mean F1 {report['baseline']['mean_f1']:.2f}, "
        f"augmented mean F1 {report['augmented']['mean_f1']:.2f} "
        f"(delta {report['mean_f1_delta']:+.2f})"
    )
    return 0


def cmd_pipeline(args) -> int:
    wd = args.workdir
    os.makedirs(wd, exist_ok=True)

    def path(name: str) -> str:
        return os.path.join(wd, name)

    steps = [
        ["synth", "--grammar", args.grammar, "--n-train", str(args.n_train),
         "--n-test", str(args.n_test), "--seed", str(args.seed), "--out-dir", wd],
        ["delexicalize", "--corpus", path("train.conll"),
         "--out-delex", path("train.delex"), "--out-lexicon", path("lexicon.json")],
        ["pair", "--delex", path("train.delex"), "--m-in", str(args.m_in),
         "--m-out", str(args.m_out), "--k-folds", str(args.k_folds),
         "--seed", str(stable_seed(args.seed, "pair")),
         "--out-pairs", path("pairs.json"), "--out-folds", path("folds.json"),
         "--out-summary", path("pairing_summary.json")],
        ["augment", "--pairs", path("pairs.json"), "--folds", path("folds.json"),
         "--lexicon", path("lexicon.json"), "--m-out", str(args.m_out),
         "--seed", str(stable_seed(args.seed, "augment")),
         "--train-steps", str(args.train_steps),
         "--diversity-reg-weight", str(args.diversity_reg_weight),
         "--dup-attention-weight", str(args.dup_attention_weight),
         "--out-corpus", path("augmented.conll"), "--out-delex", path("generated.delex"),
         "--out-sidecar", path("augmented.sidecar.json"), "--out-skips", path("augmented.skips.json")],
        ["eval-diversity", "--generated", path("generated.delex"),
         "--training", path("train.delex"),
         "--out-report", path("diversity.json"), "--out-histogram", path("diversity_hist.tsv")],
        ["eval-diversity", "--lexicalized", "--generated", path("augmented.conll"),
         "--training", path("train.conll"),
         "--out-report", path("diversity_lex.json"), "--out-histogram", path("diversity_lex_hist.tsv")],
        ["ab-test", "--train", path("train.conll"), "--augmented", path("augmented.conll"),
         "--test", path("test.conll"), "--n-seeds", str(args.n_seeds),
         "--seed", str(stable_seed(args.seed, "abtest")),
         "--tagger-steps", str(args.tagger_steps),
         "--out", path("abtest.json"), "--out-tsv", path("abtest_per_seed.tsv")],
    ]
    artifacts = []
    for argv in steps:
        code = _dispatch(argv)
        if code != 0:
            return code
    for name in sorted(os.listdir(wd)):
        if not name.endswith(".meta.json") and name != "manifest.json":
            artifacts.append(name)
    atomic_write_json(path("manifest.json"), {"seed": args.seed, "artifacts": artifacts})
    print(f"pipeline complete; artifacts in {wd}")
    return 0


# ----- parser wiring ---------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="clusteraug", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="sample an annotated corpus from a template grammar")
    p.add_argument("--grammar", default=synth_mod.bundled_grammar_path(),
                   help="template grammar JSON (default: bundled flight domain)")
    p.add_argument("--n-train", type=int, default=120)
    p.add_argument("--n-test", type=int, default=60)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("delexicalize", help="delexicalize a corpus and harvest its slot lexicon")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-delex", required=True)
    p.add_argument("--out-lexicon", required=True)
    p.set_defaults(func=cmd_delexicalize)

    p = sub.add_parser("pair", help="build cluster-to-cluster pairs and fold assignment")
    p.add_argument("--delex", required=True)
    p.add_argument("--m-in", type=int, default=3)
    p.add_argument("--m-out", type=int, default=3)
    p.add_argument("--k-folds", type=int, default=2)
    p.add_argument("--k-override", type=int, default=None,
                   help="fixed cluster count per frame (default: size/m_in)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-pairs", required=True)
    p.add_argument("--out-folds", required=True)
    p.add_argument("--out-summary", default=None)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("train", help="train the generator for one fold")
    p.add_argument("--pairs", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report-every", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_c2c_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("augment", help="cross-expansion: train per fold and generate")
    p.add_argument("--pairs", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--checkpoints", default=None,
                   help="comma-separated per-fold checkpoints (skips training)")
    p.add_argument("--m-out", type=int, default=3)
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None,
                   help="master seed for training, decoding and refilling")
    p.add_argument("--filter-empty-slots", action="store_true")
    p.add_argument("--drop-training-duplicates", action="store_true")
    p.add_argument("--training-delex", default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--out-delex", required=True)
    p.add_argument("--out-sidecar", required=True)
    p.add_argument("--out-skips", required=True)
    _add_c2c_flags(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval-diversity", help="novelty/diversity report for generated data")
    p.add_argument("--generated", required=True)
    p.add_argument("--training", required=True)
    p.add_argument("--lexicalized", action="store_true",
                   help="inputs are annotated corpora, compare surface tokens")
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-histogram", required=True)
    p.set_defaults(func=cmd_eval_diversity)

    p = sub.add_parser("ab-test", help="tagger F1 with vs without augmentation")
    p.add_argument("--train", required=True)
    p.add_argument("--augmented", default=None)
    p.add_argument("--test", required=True)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tagger-config", default=None)
    p.add_argument("--tagger-steps", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--out-tsv", default=None)
    p.set_defaults(func=cmd_ab_test)

    p = sub.add_parser("pipeline", help="run every stage on a grammar into a work directory")
    p.add_argument("--grammar", default=synth_mod.bundled_grammar_path(),
                   help="template grammar JSON (default: bundled flight domain)")
    p.add_argument("--workdir", required=True)
    p.add_argument("--n-train", type=int, default=120)
    p.add_argument("--n-test", type=int, default=60)
    p.add_argument("--m-in", type=int, default=3)
    p.add_argument("--m-out", type=int, default=3)
    p.add_argument("--k-folds", type=int, default=2)
    p.add_argument("--train-steps", type=int, default=600)
    p.add_argument("--tagger-steps", type=int, default=300)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--dup-attention-weight", type=float, default=0.01)
    p.add_argument("--diversity-reg-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def _dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def main(argv=None) -> int:
    try:
        return _dispatch(argv if argv is not None else sys.argv[1:])
    except UsageError as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ValidationError) as exc:
        print(f"error:validation: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, KernelError, ClusterAugError) as exc:
        print(f"error:runtime: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
