"""Command-line harness: corpus generation, fine-tuning, unlearning runs,
evaluation and gradient reports.

Every subcommand reads one config file (``--config``) plus ``--set
section.key=value`` overrides, writes under the run directory and records
what it wrote in ``manifest.json``.  Relative ``run.out_dir`` values are
resolved under ``$CEULAB_OUT`` when that variable is set.

Exit codes: 0 success, 2 configuration error, 3 I/O or stale input,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import corpus as corpus_mod
from .autodiff import NaNLogitsError
from .config import STAGE_SECTIONS, ConfigError, RunConfig
from .csvio import write_csv
from .evaluate import Evaluation, evaluate, metrics_csv, score_items
from .experiment import finetune_examples, forget_examples, memorization_recall
from .grad_analysis import dpo_csv, dpo_report, grpo_csv, grpo_report, sweep_report
from .manifest import Manifest, StaleInputError
from .toy_lm import CheckpointError, DivergenceError, init_model, load, save, train

log = logging.getLogger("ceulab")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
OUT_ENV = "CEULAB_OUT"

CORPUS_FILE = "corpus.txt"


class HarnessIOError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def run_root(cfg: RunConfig) -> Path:
    out = Path(cfg["run"]["out_dir"])
    base = os.environ.get(OUT_ENV)
    if base and not out.is_absolute():
        out = Path(base) / out
    return out


def _write(root: Path, rel: str, text: str) -> str:
    path = root / rel
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise HarnessIOError(f"cannot write {path}: {exc.strerror}") from exc
    return rel


def _save_model(root: Path, rel: str, params, extra=None) -> str:
    path = root / rel
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        save(params, path, extra)
    except OSError as exc:
        raise HarnessIOError(f"cannot write {path}: {exc.strerror}") from exc
    return rel


def _checksum(cfg: RunConfig, stage: str) -> str:
    return cfg.section_checksum(STAGE_SECTIONS[stage])


def _sections(cfg: RunConfig, stage: str) -> dict:
    return {s: dict(cfg[s]) for s in STAGE_SECTIONS[stage]}


def _load_corpus(cfg: RunConfig, manifest: Manifest):
    manifest.require("gen-data", _checksum(cfg, "gen-data"))
    text = (manifest.root / CORPUS_FILE).read_text()
    corpus, parts = corpus_mod.loads(text)
    return corpus, parts


def _load_stage_model(cfg: RunConfig, manifest: Manifest, stage: str):
    manifest.require(stage, _checksum(cfg, stage))
    params, _ = load(manifest.root / stage / "model.npz")
    return params


def _trace_csv(trace) -> str:
    return write_csv("loss-trace", ["epoch", "objective", "loss"], trace)


def _eval_splits(cfg: RunConfig, corpus, parts) -> dict:
    stride = cfg["eval"]["retain_stride"]
    return {"forget": parts.forget, "retain": parts.retain[::stride], "probe": corpus.probes}


def _reference_ratios(cfg: RunConfig, manifest: Manifest, parts) -> np.ndarray:
    ref = _load_stage_model(cfg, manifest, "reference")
    return score_items(ref, parts.forget, gold_question=False).truth_ratio


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> Path:
    """Generate the corpus and forget/retain split."""
    root = run_root(cfg)
    corpus = corpus_mod.generate(**cfg.corpus_kwargs())
    parts = corpus_mod.split(corpus, cfg.split_spec())
    rel = _write(root, CORPUS_FILE, corpus_mod.dumps(corpus, parts))
    manifest = Manifest.open(root)
    manifest.record(
        "gen-data", _checksum(cfg, "gen-data"), [rel], config=_sections(cfg, "gen-data"),
        extra={"n_items": len(corpus.items), "forget_profiles": list(parts.forget_profiles)},
    )
    log.info("corpus: %d items, %d probes, forget profiles %s",
             len(corpus.items), len(corpus.probes), list(parts.forget_profiles))
    return root / rel


def cmd_finetune(cfg: RunConfig, retain_only: bool = False) -> Path:
    """Fine-tune from scratch with cross-entropy.

    With ``retain_only`` the forget profiles are left out, giving the
    reference model that Forget Quality compares against.
    """
    root = run_root(cfg)
    manifest = Manifest.open(root)
    corpus, parts = _load_corpus(cfg, manifest)
    stage = "reference" if retain_only else "finetune"
    dataset = finetune_examples(corpus, parts, retain_only)
    params = init_model(cfg.model_config(corpus.vocab.size))
    result = train(params, dataset, cfg.finetune_settings(), "cross_entropy")

    gate = cfg["finetune"]["memorization_gate"]
    recall = memorization_recall(result.params, parts, retain_only)
    passed = all(v >= gate for v in recall.values())
    if not passed:
        log.warning("memorization gate %.2f not reached: %s", gate, recall)

    outputs = [
        _save_model(root, f"{stage}/model.npz", result.params),
        _write(root, f"{stage}/loss_trace.csv", _trace_csv(result.trace)),
    ]
    manifest.record(stage, _checksum(cfg, stage), outputs, inputs=["gen-data"],
                    config=_sections(cfg, stage),
                    extra={"rouge_l_recall": recall, "memorization_gate_passed": passed})
    return root / stage / "model.npz"


def cmd_unlearn(cfg: RunConfig) -> Path:
    """Unlearn the forget set and evaluate at each requested epoch.

    A diverging run (typically gradient ascent) is not an error: the
    remaining epochs are written as NaN with status ``diverged``.
    """
    root = run_root(cfg)
    manifest = Manifest.open(root)
    corpus, parts = _load_corpus(cfg, manifest)
    base = _load_stage_model(cfg, manifest, "finetune")
    ref_ratios = _reference_ratios(cfg, manifest, parts)
    splits = _eval_splits(cfg, corpus, parts)
    gold = cfg["eval"]["gold_question"]
    objective = cfg["unlearn"]["objective"]
    wanted = cfg.evaluate_epochs()
    settings = cfg.unlearn_settings()
    settings.epochs = max(wanted)
    stage = f"unlearn/{objective}"

    evaluations: dict[int, Evaluation] = {0: evaluate(base, splits, ref_ratios, gold)}
    outputs: list[str] = []

    def on_epoch(epoch, params):
        if epoch in wanted:
            outputs.append(_save_model(root, f"{stage}/epoch_{epoch}.npz", params))
            try:
                evaluations[epoch] = evaluate(params, splits, ref_ratios, gold)
            except NaNLogitsError as exc:
                raise DivergenceError(
                    f"{objective}: model outputs are non-finite at epoch {epoch} ({exc})",
                    epoch, -1, float("nan"),
                ) from exc
            log.info("%s epoch %d: %s", objective, epoch, evaluations[epoch].composite)

    diagnostic = ""
    try:
        trace = train(base, forget_examples(parts), settings, objective, callback=on_epoch).trace
    except DivergenceError as exc:
        diagnostic = str(exc)
        log.warning("%s diverged: %s", objective, diagnostic)
        trace = exc.trace

    columns = [(f"epoch_{e}", evaluations.get(e)) for e in wanted]
    outputs.append(_write(root, f"{stage}/metrics.csv", metrics_csv(columns)))
    outputs.append(_write(root, f"{stage}/loss_trace.csv", _trace_csv(trace)))
    outputs.append(_write(root, f"{stage}/tradeoff.csv",
                          _tradeoff_csv(objective, [0] + wanted, evaluations, diagnostic)))
    manifest.record(stage, _checksum(cfg, "unlearn"), outputs,
                    inputs=["gen-data", "finetune", "reference"],
                    config=_sections(cfg, "unlearn"),
                    extra={"diverged": bool(diagnostic)})
    return root / stage


def _tradeoff_csv(objective, epochs, evaluations, diagnostic) -> str:
    header = ["objective", "epoch", "model_utility", "forget_quality", "log_forget_quality",
              "forget_norm_prob", "retain_rouge_l_recall", "status", "diagnostic"]
    rows = []
    for epoch in epochs:
        ev = evaluations.get(epoch)
        if ev is None:
            rows.append([objective, epoch] + [np.nan] * 5 + ["diverged", diagnostic])
            continue
        c = ev.composite
        rows.append([objective, epoch, c.model_utility, c.forget_quality, c.log_forget_quality,
                     ev.records["forget"].norm_prob, ev.records["retain"].rouge_l_recall,
                     "ok", ""])
    return write_csv("tradeoff", header, rows)


def cmd_eval(cfg: RunConfig, checkpoint: str | None = None) -> Path:
    """Evaluate one checkpoint (the fine-tuned model by default)."""
    root = run_root(cfg)
    manifest = Manifest.open(root)
    corpus, parts = _load_corpus(cfg, manifest)
    if checkpoint is None:
        params = _load_stage_model(cfg, manifest, "finetune")
        label = "finetune"
    else:
        params, _ = load(checkpoint)
        label = Path(checkpoint).stem
    ref_ratios = _reference_ratios(cfg, manifest, parts)
    ev = evaluate(params, _eval_splits(cfg, corpus, parts), ref_ratios,
                  cfg["eval"]["gold_question"])
    rel = _write(root, f"eval/{label}_metrics.csv", metrics_csv([(label, ev)]))
    manifest.record(f"eval/{label}", _checksum(cfg, "eval"), [rel],
                    inputs=["gen-data", "reference"], config=_sections(cfg, "eval"))
    return root / rel


def cmd_grad_report(cfg: RunConfig, grid_size: int = 101) -> Path:
    """Write the confidence sweep and the GRPO / DPO coefficient tables."""
    root = run_root(cfg)
    outputs = [
        _write(root, "grad/confidence_sweep.csv", sweep_report(grid_size).to_csv()),
        _write(root, "grad/grpo_coefficients.csv", grpo_csv(grpo_report())),
        _write(root, "grad/dpo_weights.csv", dpo_csv(dpo_report())),
    ]
    Manifest.open(root).record("grad-report", f"grid={grid_size}", outputs)
    return root / "grad"


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults apply to missing keys)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--out", help="run directory (overrides run.out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="ceulab",
        description=" ".join(__doc__.split("\n\n")[0].split()),
        epilog="exit codes: 0 ok, 2 config, 3 I/O or stale input, 4 divergence",
    )
    parser.add_argument("--version", action="version", version=f"ceulab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate corpus and split")
    ft = sub.add_parser("finetune", parents=[common], help="fine-tune on the corpus")
    ft.add_argument("--retain-only", action="store_true",
                    help="train the retain-only reference model instead")
    un = sub.add_parser("unlearn", parents=[common], help="unlearn the forget set")
    un.add_argument("--objective", help="override unlearn.objective")
    un.add_argument("--epochs", help="comma-separated epochs to evaluate")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", help="checkpoint path (default: fine-tuned model)")
    gr = sub.add_parser("grad-report", parents=[common], help="gradient coefficient tables")
    gr.add_argument("--grid", type=int, default=101, help="confidence grid size")
    sub.add_parser("show-config", parents=[common], help="print the effective config")
    return parser


def _resolve_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"run.out_dir={args.out}")
    if getattr(args, "objective", None):
        overrides.append(f"unlearn.objective={args.objective}")
    if getattr(args, "epochs", None):
        overrides.append(f"unlearn.evaluate_epochs={args.epochs}")
        try:
            last = max(int(tok) for tok in args.epochs.split(",") if tok.strip())
        except ValueError:
            raise ConfigError(f"--epochs must be comma-separated integers, got {args.epochs!r}")
        overrides.append(f"unlearn.epochs={last}")
    return RunConfig.from_file(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = _resolve_config(args)
        if args.command == "show-config":
            sys.stdout.write(cfg.to_text())
        elif args.command == "gen-data":
            print(cmd_gen_data(cfg))
        elif args.command == "finetune":
            print(cmd_finetune(cfg, retain_only=args.retain_only))
        elif args.command == "unlearn":
            print(cmd_unlearn(cfg))
        elif args.command == "eval":
            print(cmd_eval(cfg, args.checkpoint))
        elif args.command == "grad-report":
            if args.grid < 2:
                raise ConfigError("--grid must be at least 2")
            print(cmd_grad_report(cfg, args.grid))
    except (ConfigError, corpus_mod.EmptyForgetSetError, corpus_mod.PoolExhaustedError) as exc:
        print(f"ceulab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, HarnessIOError, StaleInputError, CheckpointError) as exc:
        print(f"ceulab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"ceulab: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
