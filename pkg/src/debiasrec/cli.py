"""Command-line entry point.

Subcommands: simulate, train, eval, gradcheck, analyze, ablate.  Exit
codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every command writes its fully-resolved config and a manifest (inputs,
config hash, code version) next to its outputs; nothing in the outputs
depends on wall-clock time, so reruns are byte-identical.
"""

import argparse
import hashlib
import os
import sys

import numpy as np

from . import __version__
from .config import (PROFILES, RunConfig, apply_pairs, config_to_text,
                     load_config, parse_pairs, sim_pairs)
from .core import NumericalError
from .data import DataFormatError, load_behaviors, load_news, split
from .kernels import LANE
from .metrics import chi_square, ctr_by_bucket, displays_contingency
from .model import DebiasModel, read_checkpoint, write_checkpoint
from .optim import grad_check
from .sim import SimConfig, config_from_pairs, generate_dataset
from .text import TokenizedCatalog, build_vocab
from .train import (EvalScorer, build_instances, checkpoint_meta,
                    evaluate_split, pack_batch, state_from_tensors,
                    state_tensors, train_model)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir, command, inputs, config_text):
    lines = [f"command = {command}",
             f"package_version = {__version__}",
             f"kernel_lane = {LANE}",
             f"config_sha256 = {hashlib.sha256(config_text.encode()).hexdigest()}"]
    for name, path in sorted(inputs.items()):
        lines.append(f"input.{name} = {os.path.basename(str(path))}")
        lines.append(f"input.{name}.sha256 = {_sha256(path)}")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _ensure_out_dir(path, force):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"parent directory does not exist: {parent}")
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force)")
    os.makedirs(path, exist_ok=True)


def _config_pairs(args):
    pairs = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            pairs.update(parse_pairs(fh.read()))
    for item in args.set or []:
        sub = parse_pairs(item)
        for k, v in sub.items():
            pairs[k] = v
    return pairs


def _load_run_config(args) -> RunConfig:
    pairs = _config_pairs(args)
    cfg = PROFILES[args.profile]()
    return apply_pairs(cfg, pairs)


def n_workers():
    raw = os.environ.get("DEBIASREC_THREADS", "")
    if raw:
        return max(1, int(raw))
    return min(4, os.cpu_count() or 1)


# ----- dataset loading shared by train/eval/analyze -------------------------

def _load_dataset(data_dir, cfg: RunConfig):
    news_path = os.path.join(data_dir, "news.tsv")
    behaviors_path = os.path.join(data_dir, "behaviors.tsv")
    catalog_articles = load_news(news_path)
    impressions = load_behaviors(behaviors_path, catalog_articles, cfg.p_max)
    boundary = cfg.split_time
    if boundary is None:
        manifest = os.path.join(data_dir, "dataset_manifest.txt")
        if os.path.exists(manifest):
            with open(manifest, encoding="utf-8") as fh:
                for line in fh:
                    if line.startswith("split_time = "):
                        boundary = int(line.split(" = ")[1])
                        break
    splits = split(impressions, cfg.val_fraction, cfg.seed, boundary)
    return catalog_articles, impressions, splits, news_path, behaviors_path


def _build_vocab_catalog(catalog_articles, cfg: RunConfig):
    vocab = build_vocab((a.title for a in catalog_articles.values()), cfg.min_count)
    catalog = TokenizedCatalog.build(
        ((a.news_id, a.title) for a in catalog_articles.values()), vocab, cfg.l_max)
    return vocab, catalog


# ----- subcommands -----------------------------------------------------------

def cmd_simulate(args):
    pairs = _config_pairs(args)
    unknown = {k for k in pairs if not k.startswith("sim_")}
    if unknown:
        raise UsageError(f"simulate only accepts sim_* keys, got {sorted(unknown)}")
    sim_cfg = config_from_pairs(sim_pairs(pairs)) if pairs else SimConfig()
    _ensure_out_dir(args.out, args.force)
    paths = generate_dataset(sim_cfg, args.out)
    with open(paths["manifest"], encoding="utf-8") as mf:
        resolved = "".join(line for line in mf if line.startswith("sim_"))
    with open(os.path.join(args.out, "config_resolved.txt"), "w", encoding="utf-8") as fh:
        fh.write(resolved)
    _write_manifest(args.out, "simulate", {}, resolved)
    print(f"wrote dataset to {args.out}")
    for name, path in sorted(paths.items()):
        print(f"  {name}: {path}")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_run_config(args)
    _ensure_out_dir(args.out, args.force)
    catalog_articles, _, splits, news_path, behaviors_path = _load_dataset(args.data, cfg)
    vocab, catalog = _build_vocab_catalog(catalog_articles, cfg)

    resume = None
    if args.resume:
        meta, tensors = read_checkpoint(args.resume)
        # the epoch budget may grow across resumes; everything else must match
        old = {k: v for k, v in parse_pairs(meta["config_text"]).items()
               if k not in ("epochs", "patience")}
        new = {k: v for k, v in parse_pairs(config_to_text(cfg)).items()
               if k not in ("epochs", "patience")}
        if old != new:
            diff = sorted(k for k in old if old[k] != new.get(k))
            raise DataFormatError(
                f"resume checkpoint was trained with a different config ({diff})")
        if meta["vocab_hash"] != vocab.content_hash():
            raise DataFormatError("resume checkpoint vocabulary mismatch")
        resume = state_from_tensors(meta, tensors)

    result = train_model(cfg, vocab, catalog, splits, resume=resume,
                         log=lambda msg: print(msg, flush=True))

    vocab.save(os.path.join(args.out, "vocab.tsv"))
    with open(os.path.join(args.out, "config_resolved.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
    ckpt = os.path.join(args.out, "checkpoint.bin")
    meta = checkpoint_meta(cfg, vocab, result.state, result.model.counters,
                           result.skipped_impressions)
    write_checkpoint(ckpt, meta, state_tensors(result.state))
    hist_path = os.path.join(args.out, "history.csv")
    with open(hist_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_auc,val_mrr,val_ndcg5,val_ndcg10\n")
        for row in result.history:
            fh.write(f"{row['epoch']},{row['train_loss']:.6f},{row['val_auc']:.6f},"
                     f"{row['val_mrr']:.6f},{row['val_ndcg5']:.6f},{row['val_ndcg10']:.6f}\n")
    _write_manifest(args.out, "train",
                    {"news": news_path, "behaviors": behaviors_path},
                    config_to_text(cfg))
    print(f"best validation AUC {result.state.best_val_auc:.4f} "
          f"(epoch {result.state.best_epoch + 1}); checkpoint: {ckpt}")
    return EXIT_OK


def _model_from_checkpoint(ckpt_path, data_dir):
    meta, tensors = read_checkpoint(ckpt_path)
    cfg = apply_pairs(RunConfig(), parse_pairs(meta["config_text"]))
    catalog_articles = load_news(os.path.join(data_dir, "news.tsv"))
    vocab, catalog = _build_vocab_catalog(catalog_articles, cfg)
    if meta["vocab_hash"] != vocab.content_hash():
        raise DataFormatError(
            f"{ckpt_path}: vocabulary hash does not match the data directory")
    model = DebiasModel(cfg, vocab_size=len(vocab))
    best = {k[len("best."):]: v for k, v in tensors.items() if k.startswith("best.")}
    model.store.restore(best)
    return meta, cfg, model, catalog_articles, catalog


def cmd_eval(args):
    meta, cfg, model, catalog_articles, catalog = _model_from_checkpoint(
        args.checkpoint, args.data)
    if args.mode and args.mode != meta["scoring_mode"]:
        raise DataFormatError(
            f"mode mismatch: checkpoint was trained with scoring_mode="
            f"{meta['scoring_mode']}, --mode asked for {args.mode}")
    _ensure_out_dir(args.out, args.force)

    behaviors = args.behaviors or os.path.join(args.data, "behaviors.tsv")
    impressions = load_behaviors(behaviors, catalog_articles, cfg.p_max)
    if args.split == "test":
        boundary = cfg.split_time
        if boundary is None:
            manifest = os.path.join(args.data, "dataset_manifest.txt")
            if os.path.exists(manifest):
                with open(manifest, encoding="utf-8") as fh:
                    for line in fh:
                        if line.startswith("split_time = "):
                            boundary = int(line.split(" = ")[1])
        if boundary is not None:
            impressions = [r for r in impressions if r.timestamp >= boundary]
    if not impressions:
        raise DataFormatError("no impressions selected for evaluation")

    scorer = EvalScorer(model, catalog)
    scores = scorer.preference_scores(impressions)
    from .metrics import evaluate
    report = evaluate(impressions, lambda i, imp: scores[i])
    print(report.format_table())
    with open(os.path.join(args.out, "eval_report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())

    if args.dump_scores:
        with open(os.path.join(args.out, "scores.csv"), "w", encoding="utf-8") as fh:
            fh.write("impression_id,news_id,s_p,s_b,s_c,label\n")
            for i, imp in enumerate(impressions):
                s_p = scores[i]
                s_b = scorer.bias_scores(imp)
                for j, cand in enumerate(imp.candidates):
                    fh.write(f"{imp.impression_id},{cand.news_id},{s_p[j]:.10g},"
                             f"{s_b[j]:.10g},{s_p[j] + s_b[j]:.10g},{cand.label}\n")
    if args.dump_attention:
        with open(os.path.join(args.out, "attention.csv"), "w", encoding="utf-8") as fh:
            fh.write("impression_id,user_id,news_id,position,size,a_c,a_b,alpha\n")
            for imp in impressions:
                for nid, pos, size, a_c, a_b, alpha in scorer.attention_dump(imp):
                    fh.write(f"{imp.impression_id},{imp.user_id},{nid},{pos},{size},"
                             f"{a_c:.10g},{a_b:.10g},{alpha:.10g}\n")
    _write_manifest(args.out, "eval",
                    {"behaviors": behaviors, "checkpoint": args.checkpoint},
                    meta["config_text"])
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = _load_run_config(args)
    report, ok = run_gradcheck(cfg, eps=args.eps, sample=args.sample, tol=args.tol)
    print(report.format(args.tol))
    print("gradient check: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_NUMERIC


def run_gradcheck(cfg: RunConfig, eps=1e-5, sample=8, tol=1e-4):
    """Gradient-check the full training loss on a tiny synthetic batch."""
    from .sim import generate_catalog, generate_logs
    sim_cfg = SimConfig(n_users=6, n_news=40, n_topics=4, vocab_size=200,
                        impressions_per_user=4, slate_size=5, pool_size=10,
                        unbiased_per_user=1, seed=cfg.seed)
    articles, truth = generate_catalog(sim_cfg)
    biased, _ = generate_logs(sim_cfg, truth)
    vocab = build_vocab((a.title for a in articles), 1)
    catalog = TokenizedCatalog.build(((a.news_id, a.title) for a in articles),
                                     vocab, cfg.l_max)
    instances, _ = build_instances(biased, catalog, cfg.k_negatives,
                                   cfg.m_max, cfg.seed)
    if not instances:
        raise DataFormatError("gradient-check data produced no instances")
    model = DebiasModel(cfg, vocab_size=len(vocab))
    batch = pack_batch(instances[:6], catalog)
    report = grad_check(model.loss_fn(batch), model.store, eps=eps,
                        sample=sample, seed=cfg.seed)
    return report, report.max_rel_error < tol


def cmd_analyze(args):
    catalog_articles = load_news(os.path.join(args.data, "news.tsv"))
    behaviors = args.behaviors or os.path.join(args.data, "behaviors.tsv")
    impressions = load_behaviors(behaviors, catalog_articles)
    if not impressions:
        raise DataFormatError("empty impression log")
    _ensure_out_dir(args.out, args.force)
    by_pos, by_size = ctr_by_bucket(impressions)
    with open(os.path.join(args.out, "ctr_position.csv"), "w", encoding="utf-8") as fh:
        fh.write(by_pos.to_csv("position"))
    with open(os.path.join(args.out, "ctr_size.csv"), "w", encoding="utf-8") as fh:
        fh.write(by_size.to_csv("size"))
    table = displays_contingency(impressions)
    result = chi_square(table)
    report = (f"chi_square_statistic = {result.statistic:.6f}\n"
              f"dof = {result.dof}\n"
              f"critical_value_alpha_0.01 = {result.critical_value:.6f}\n"
              f"significant_at_0.01 = {'true' if result.significant_at_001 else 'false'}\n")
    with open(os.path.join(args.out, "chi_square.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    _write_manifest(args.out, "analyze", {"behaviors": behaviors}, "")
    return EXIT_OK


_ABLATE_CELLS = {
    "full": {"scoring_mode": "full", "baum_enabled": "true"},
    "no_baum": {"scoring_mode": "full", "baum_enabled": "false"},
    "no_bacp": {"scoring_mode": "no_bacp", "baum_enabled": "true"},
    "no_debias": {"scoring_mode": "no_debias", "baum_enabled": "false"},
    "pal": {"scoring_mode": "pal", "baum_enabled": "true"},
}


def ablate_cell(base_cfg: RunConfig, cell: str, variant: str, seed: int,
                vocab, catalog, splits, unbiased):
    """Train one grid cell and return its biased + unbiased metrics."""
    overrides = dict(_ABLATE_CELLS[cell])
    overrides["brm_variant"] = variant
    overrides["seed"] = str(seed)
    cfg = apply_pairs(base_cfg, overrides)
    result = train_model(cfg, vocab, catalog, splits)
    test_report = evaluate_split(result.model, catalog, splits.test)
    unbiased_report = evaluate_split(result.model, catalog, unbiased)
    return {"cell": cell, "brm_variant": variant, "seed": seed,
            "auc": test_report.auc, "mrr": test_report.mrr,
            "ndcg5": test_report.ndcg5, "ndcg10": test_report.ndcg10,
            "unbiased_auc": unbiased_report.auc}


def cmd_ablate(args):
    cfg = _load_run_config(args)
    _ensure_out_dir(args.out, args.force)
    cells = [c.strip() for c in args.cells.split(",") if c.strip()]
    variants = [v.strip() for v in args.brm.split(",") if v.strip()]
    for c in cells:
        if c not in _ABLATE_CELLS:
            raise UsageError(f"unknown ablation cell {c!r}; choose from {sorted(_ABLATE_CELLS)}")
    catalog_articles, _, splits, news_path, behaviors_path = _load_dataset(args.data, cfg)
    vocab, catalog = _build_vocab_catalog(catalog_articles, cfg)
    unbiased_path = os.path.join(args.data, "behaviors_unbiased.tsv")
    unbiased = load_behaviors(unbiased_path, catalog_articles, cfg.p_max)

    jobs = [(cell, variant, cfg.seed + rep)
            for cell in cells for variant in variants for rep in range(args.repeats)]
    rows = []
    workers = min(n_workers(), len(jobs))
    if workers > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(ablate_cell, cfg, cell, variant, seed,
                                 vocab, catalog, splits, unbiased)
                       for cell, variant, seed in jobs]
            rows = [f.result() for f in futures]
    else:
        for cell, variant, seed in jobs:
            rows.append(ablate_cell(cfg, cell, variant, seed,
                                    vocab, catalog, splits, unbiased))

    metrics_names = ("auc", "mrr", "ndcg5", "ndcg10", "unbiased_auc")
    table_path = os.path.join(args.out, "ablation.csv")
    with open(table_path, "w", encoding="utf-8") as fh:
        header = ["cell", "brm_variant", "repeats"]
        for m in metrics_names:
            header += [f"{m}_mean", f"{m}_std"]
        fh.write(",".join(header) + "\n")
        for cell in cells:
            for variant in variants:
                group = [r for r in rows if r["cell"] == cell and r["brm_variant"] == variant]
                line = [cell, variant, str(len(group))]
                for m in metrics_names:
                    vals = np.array([r[m] for r in group])
                    line += [f"{vals.mean():.6f}", f"{vals.std(ddof=0):.6f}"]
                fh.write(",".join(line) + "\n")
    with open(os.path.join(args.out, "ablation_runs.csv"), "w", encoding="utf-8") as fh:
        fh.write("cell,brm_variant,seed," + ",".join(metrics_names) + "\n")
        for r in rows:
            fh.write(f"{r['cell']},{r['brm_variant']},{r['seed']},"
                     + ",".join(f"{r[m]:.6f}" for m in metrics_names) + "\n")
    with open(os.path.join(args.out, "config_resolved.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
    _write_manifest(args.out, "ablate",
                    {"news": news_path, "behaviors": behaviors_path,
                     "unbiased": unbiased_path},
                    config_to_text(cfg))
    print(f"wrote {table_path}")
    return EXIT_OK


def _add_config_args(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--profile", default="desk", choices=sorted(PROFILES))
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser():
    parser = _Parser(prog="debiasrec", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic biased dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue training from")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--behaviors", help="behaviors file (default: data dir test split)")
    p.add_argument("--split", default="test", choices=["test", "all"],
                   help="with the default behaviors file, evaluate this portion")
    p.add_argument("--mode", help="assert the checkpoint scoring mode")
    p.add_argument("--dump-scores", action="store_true")
    p.add_argument("--dump-attention", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--profile", default="gradcheck", choices=sorted(PROFILES))
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--sample", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("analyze", help="CTR-by-bucket tables and chi-square test")
    p.add_argument("--data", required=True)
    p.add_argument("--behaviors")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="train the variant grid and tabulate")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cells", default="full,no_baum,no_bacp,no_debias")
    p.add_argument("--brm", default="interaction")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
