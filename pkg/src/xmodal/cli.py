"""Command-line front end.

Every subcommand writes ``config.snapshot.txt`` into ``--out`` before doing
anything else; re-running with ``--config <snapshot>`` reproduces the run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .artifacts import (
    load_artifact,
    load_victim_manifest,
    save_artifact,
    save_corpus,
    save_victim_manifest,
)
from .config import RunConfig, load_config
from .corpus import gen_corpus
from .diagnostics import quadratic_fidelity, victim_fidelity
from .errors import ArtifactError, BudgetExhausted, ConfigError
from .evaluation import (
    AttackReport,
    ablate,
    attack_victim,
    evaluate,
    sweep_tile_scale,
    transfer_eval,
)
from .evaluation.report import matrix_to_csv, reports_to_csv
from .victim import build_toy_victim

log = logging.getLogger("xmodal")

SNAPSHOT = "config.snapshot.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="attack seed, overrides the config")
    common.add_argument("--workers", type=int, help="parallel oracle workers")
    common.add_argument("--budget", type=int, help="attack query budget, overrides the config")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="xmodal", description="Joint image/prompt black-box attack toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, help_text in (
        ("attack", "optimise a universal perturbation pair"),
        ("eval", "evaluate a saved artifact on the held-out split"),
        ("transfer", "evaluate one artifact across victims and corpora"),
        ("defend", "evaluate a saved artifact under input defenses"),
        ("ablate", "component ablation under equal budgets"),
        ("sweep-sk", "attack once per tile scale"),
        ("oracle-check", "estimator vs analytic gradient agreement"),
        ("gen-corpus", "write the synthetic corpus to disk"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("eval", "transfer", "defend"):
            p.add_argument("--artifact", help="artifact directory written by 'attack'")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _victim(cfg: RunConfig, seed: int | None = None):
    return build_toy_victim(
        cfg.victim_seed if seed is None else seed, cfg.tau, None, cfg.image_dims(), cfg.family_share
    )


def _corpus(cfg: RunConfig, seed: int | None = None):
    return gen_corpus(
        cfg.corpus_seed if seed is None else seed, cfg.n_images, cfg.m_prompts,
        cfg.image_dims(), cfg.image_train_frac, cfg.prompt_train_frac,
    )


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)


def _attack(cfg: RunConfig, out: Path, victim=None, corpus=None):
    victim = victim or _victim(cfg)
    corpus = corpus or _corpus(cfg)
    result = attack_victim(victim, corpus, cfg.attack_config(), cfg.workers, cfg.oracle_mode)
    save_artifact(out / "artifact", result.uap, result.delta, {
        "seed": cfg.seed,
        "victim_seed": cfg.victim_seed,
        "queries_used": result.queries_used,
        "config_hash": cfg.attack_hash(),
    })
    save_victim_manifest(out / "artifact" / "victim.txt", victim)
    result.trace.to_csv(out / "trace.csv")
    _write(out, "summary.txt", "".join(f"{k} = {v}\n" for k, v in (
        ("iterations", len(result.trace)),
        ("queries_used", result.queries_used),
        ("query_budget", cfg.query_budget),
        ("budget_exhausted", str(result.exhausted).lower()),
        ("initial_train_loss", repr(result.initial_train_loss)),
        ("final_train_loss", repr(result.final_train_loss)),
        ("config_hash", cfg.attack_hash()),
    )))
    return victim, corpus, result


def _load(cfg: RunConfig, artifact: str | None):
    if artifact is None:
        raise UsageError("--artifact is required for this command")
    uap, delta, meta = load_artifact(artifact, cfg.attack_hash())
    manifest = Path(artifact) / "victim.txt"
    victim = load_victim_manifest(manifest) if manifest.is_file() else _victim(cfg)
    return uap, delta, meta, victim


def _report_files(out: Path, stem: str, report: AttackReport) -> None:
    _write(out, f"{stem}.txt", report.to_text())
    _write(out, f"{stem}.csv", report.to_csv())


# ---------------------------------------------------------------------------
# subcommands


def cmd_attack(cfg, args, out):
    victim, corpus, result = _attack(cfg, out)
    if corpus.heldout_pairs():
        report = evaluate(victim, result.uap, result.delta, corpus, cfg.target_text, cfg.theta,
                          label=f"victim={victim.seed} held-out")
        _report_files(out, "report", report)
        print(report.to_text(), end="")
    else:
        log.warning("corpus has no held-out pairs; skipping the held-out report")
    print(f"queries used: {result.queries_used}/{cfg.query_budget}  iterations: {len(result.trace)}")


def cmd_eval(cfg, args, out):
    uap, delta, meta, victim = _load(cfg, args.artifact)
    report = evaluate(victim, uap, delta, _corpus(cfg), cfg.target_text, cfg.theta,
                      label=f"victim={victim.seed} held-out")
    _report_files(out, "report", report)
    print(report.to_text(), end="")


def cmd_defend(cfg, args, out):
    uap, delta, meta, victim = _load(cfg, args.artifact)
    corpus = _corpus(cfg)
    reports = {}
    for spec in cfg.defense_specs():
        reports[spec.label()] = evaluate(victim, uap, delta, corpus, cfg.target_text, cfg.theta,
                                         defense=spec, label=f"defense={spec.label()}")
    _write(out, "defense.csv", reports_to_csv(reports, "defense"))
    text = "".join(r.to_text() + "\n" for r in reports.values())
    _write(out, "defense.txt", text)
    print(text, end="")


def cmd_transfer(cfg, args, out):
    if args.artifact:
        uap, delta, meta, source = _load(cfg, args.artifact)
    else:
        source, _, result = _attack(cfg, out)
        uap, delta = result.uap, result.delta
    victims = [source if s == source.seed else _victim(cfg, s) for s in cfg.victim_seeds]
    corpora = [_corpus(cfg, s) for s in cfg.corpus_seeds]
    matrix = transfer_eval(uap, delta, victims, corpora, cfg.target_text, cfg.theta)
    rows = [f"victim_{v.seed}" for v in victims]
    cols = [f"corpus_{s}" for s in cfg.corpus_seeds]
    _write(out, "transfer_attacked.csv", matrix_to_csv(matrix, rows, cols))
    _write(out, "transfer_clean.csv", matrix_to_csv(matrix, rows, cols, lambda r: r.clean_overall))
    flat = {f"{r}/{c}": rep for r, row in zip(rows, matrix) for c, rep in zip(cols, row)}
    _write(out, "transfer_reports.csv", reports_to_csv(flat, "victim/corpus"))
    lines = [f"source victim seed {source.seed}; overall similarity to target (attacked / clean)"]
    lines.append(f"{'':<12}" + "".join(f"{c:>22}" for c in cols))
    for r, row in zip(rows, matrix):
        lines.append(f"{r:<12}" + "".join(f"{rep.overall:>11.4f} /{rep.clean_overall:>8.4f}" for rep in row))
    text = "\n".join(lines) + "\n"
    _write(out, "transfer.txt", text)
    print(text, end="")


def cmd_ablate(cfg, args, out):
    results = ablate(_victim(cfg), _corpus(cfg), cfg.attack_config(), cfg.ablate_modes,
                     workers=cfg.workers, oracle_mode=cfg.oracle_mode)
    reports = {mode: rep for mode, (rep, _) in results.items()}
    for mode, (_, res) in results.items():
        res.trace.to_csv(out / f"trace_{mode}.csv")
    _write(out, "ablation.csv", reports_to_csv(reports, "mode"))
    text = "".join(r.to_text() + "\n" for r in reports.values())
    _write(out, "ablation.txt", text)
    print(text, end="")


def cmd_sweep_sk(cfg, args, out):
    results = sweep_tile_scale(_victim(cfg), _corpus(cfg), cfg.attack_config(), cfg.sk_values,
                               workers=cfg.workers, oracle_mode=cfg.oracle_mode)
    reports = {s: rep for s, (rep, _) in results.items()}
    _write(out, "sweep_sk.csv", reports_to_csv(reports, "s_k"))
    best = max(reports, key=lambda s: reports[s].overall)
    interior = best not in (min(reports), max(reports))
    text = "".join(r.to_text() + "\n" for r in reports.values())
    text += f"best s_k = {best} (interior: {str(interior).lower()})\n"
    _write(out, "sweep_sk.txt", text)
    print(text, end="")


def cmd_oracle_check(cfg, args, out):
    victim, corpus = _victim(cfg), _corpus(cfg)
    attack_cfg = cfg.attack_config()
    rows = ["source,modality,K,seeds,mean_cosine"]
    for K in cfg.check_ks:
        rows.append(f"quadratic,uniform,{K},{cfg.check_seeds},{quadratic_fidelity(K, cfg.check_seeds, probe='uniform')!r}")
        rows.append(f"quadratic,gaussian,{K},{cfg.check_seeds},{quadratic_fidelity(K, cfg.check_seeds, probe='gaussian')!r}")
        fid = victim_fidelity(victim, corpus, attack_cfg, K, cfg.check_seeds)
        rows.append(f"victim,image,{K},{cfg.check_seeds},{fid['image']!r}")
        rows.append(f"victim,text,{K},{cfg.check_seeds},{fid['text']!r}")
    text = "\n".join(rows) + "\n"
    _write(out, "oracle_check.csv", text)
    print(text, end="")


def cmd_gen_corpus(cfg, args, out):
    corpus = _corpus(cfg)
    save_corpus(out / "corpus", corpus)
    print(f"wrote {len(corpus.images)} images and {len(corpus.prompts)} prompts to {out / 'corpus'}")


COMMANDS = {
    "attack": cmd_attack,
    "eval": cmd_eval,
    "transfer": cmd_transfer,
    "defend": cmd_defend,
    "ablate": cmd_ablate,
    "sweep-sk": cmd_sweep_sk,
    "oracle-check": cmd_oracle_check,
    "gen-corpus": cmd_gen_corpus,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, workers=args.workers, query_budget=args.budget
        )
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out, SNAPSHOT, cfg.to_text())
        COMMANDS[args.command](cfg, args, out)
        return 0
    except UsageError as exc:
        print(f"xmodal: error: usage: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"xmodal: error: config: {exc}", file=sys.stderr)
        return 2
    except ArtifactError as exc:
        print(f"xmodal: error: artifact: {exc}", file=sys.stderr)
        return 3
    except BudgetExhausted as exc:
        print(f"xmodal: error: budget: {exc}", file=sys.stderr)
        return 4
    except (ValueError, KeyError) as exc:
        print(f"xmodal: error: invalid: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
