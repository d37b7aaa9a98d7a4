"""Command-line pipeline: synth, tokenize, train, eval, pid, attn-share."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

from .backbone.transformer import BackboneConfig, GenerativeBackbone
from .checkpoint import check_vocab, load_checkpoint, save_checkpoint
from .data.config import apply_section, parse_overrides, read_config, split_sections
from .data.dataset import load_dataset, load_identifiers, save_dataset, save_identifiers
from .data.synthetic import SynthConfig, generate_synthetic
from .evaluation import EvalReport
from .pid import attention_share, audit_model, write_pid_csv, write_share_csv
from .saliency import write_diagnostics
from .tokenizer.io import write_codebook
from .tokenizer.identifiers import tokenize_items
from .tokenizer.rqvae import RQConfig, train_rqvae
from .tokenizer.vocab import TEXT, VISION, build_vocab
from .training import VARIANTS, TrainConfig, Trainer, history_tokens, split_leave_one_out

logger = logging.getLogger("synrec")

SECTIONS = ("synth", "rq", "model", "train")


@dataclass
class ModelSettings:
    """Backbone hyperparameters that do not depend on the vocabulary."""

    d_model: int = 64
    n_heads: int = 6
    head_dim: Optional[int] = 16
    n_layers: int = 4
    d_ff: int = 256
    max_len: int = 64
    dropout: float = 0.0
    use_positions: bool = True
    seed: int = 0


@dataclass
class PipelineConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    rq: RQConfig = field(default_factory=RQConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)


def resolve_config(path: Optional[str], overrides: Sequence[str], seed: Optional[int] = None,
                   variant: Optional[str] = None) -> PipelineConfig:
    """Defaults, then the config file, then ``--set`` overrides, then ``--seed``/``--variant``."""
    flat = read_config(path)
    flat.update(parse_overrides(overrides))
    parts = split_sections(flat, SECTIONS)
    cfg = PipelineConfig()
    cfg = PipelineConfig(**{s: apply_section(getattr(cfg, s), parts[s], s) for s in SECTIONS})
    if seed is not None:
        cfg = PipelineConfig(**{s: replace(getattr(cfg, s), seed=seed) for s in SECTIONS})
    if variant is not None:
        cfg.train = replace(cfg.train, variant=variant)
    return cfg


def backbone_config(settings: ModelSettings, vocab_size: int, target_len: int) -> BackboneConfig:
    return BackboneConfig(vocab_size=vocab_size, d_model=settings.d_model, n_heads=settings.n_heads,
                          head_dim=settings.head_dim, n_layers=settings.n_layers, d_ff=settings.d_ff,
                          max_len=settings.max_len, max_target_len=target_len, dropout=settings.dropout,
                          use_positions=settings.use_positions, seed=settings.seed)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: PipelineConfig) -> None:
    ds = generate_synthetic(cfg.synth)
    save_dataset(ds, args.out)
    meta = ds.metadata
    print(f"wrote {meta['items']} items, {meta['users']} users (avg length {meta['avg_len']:.3f}) to {args.out}")


def cmd_tokenize(args, cfg: PipelineConfig) -> None:
    ds = load_dataset(args.data)
    mt = train_rqvae(ds.text, cfg.rq, TEXT)
    mv = train_rqvae(ds.vision, cfg.rq, VISION)
    base = build_vocab(cfg.rq.depth, cfg.rq.codebook_size)
    idents, vocab = tokenize_items(ds.item_ids, ds.text, ds.vision, mt, mv, base)
    d = Path(args.data)
    write_codebook(d / "text.codebook", mt.stack)
    write_codebook(d / "vision.codebook", mv.stack)
    save_identifiers(d, idents, vocab)
    print(f"vocabulary of {vocab.size} tokens ({vocab.n_suffix} collision suffixes); "
          f"reconstruction error text {mt.recon_history[-1]:.5f}, vision {mv.recon_history[-1]:.5f}")


def _load_corpus(data_dir):
    ds = load_dataset(data_dir)
    idents, vocab = load_identifiers(data_dir, ds.item_ids)
    return ds, [i.tokens for i in idents], vocab


def cmd_train(args, cfg: PipelineConfig) -> None:
    ds, item_tokens, vocab = _load_corpus(args.data)
    split = split_leave_one_out(ds.sequences)
    target_len = max(len(t) for t in item_tokens)
    model = GenerativeBackbone(backbone_config(cfg.model, vocab.size, target_len))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(model, vocab, item_tokens, cfg.train, dump_dir=out)
    result = trainer.fit(split)
    save_checkpoint(out, model, vocab, {"variant": cfg.train.variant, "best_epoch": result.best_epoch,
                                        "seed": cfg.train.seed, "lam": cfg.train.effective_lam})
    result.write_curves(out / "curves.csv")
    name = Path(args.data).name
    write_diagnostics(out / "diagnostics.csv",
                      [(name, m.step, m.text_density, m.vision_density,
                        TEXT if m.text_density >= m.vision_density else VISION) for m in result.curves])
    print(f"trained {cfg.train.variant} for {len(result.curves)} steps; best epoch {result.best_epoch} "
          f"(valid NDCG@10 {result.best_valid:.4f}); checkpoint in {out}")


def _trainer_for(args, cfg: PipelineConfig):
    model, vocab, _ = load_checkpoint(args.checkpoint)
    ds, item_tokens, data_vocab = _load_corpus(args.data)
    check_vocab(vocab, data_vocab)
    tcfg = replace(cfg.train, beam=args.beam) if getattr(args, "beam", None) else cfg.train
    return Trainer(model, vocab, item_tokens, tcfg), ds


def cmd_eval(args, cfg: PipelineConfig) -> None:
    trainer, ds = _trainer_for(args, cfg)
    split = split_leave_one_out(ds.sequences)
    examples = split.test if args.split == "test" else split.valid
    report = trainer.evaluate(examples, view=args.view)
    if args.out:
        report.write_csv(args.out)
    print(report.table())


def cmd_pid(args, cfg: PipelineConfig) -> None:
    EvalReport.from_ranks([], 1).get(args.metric)
    trainer, ds = _trainer_for(args, cfg)
    split = split_leave_one_out(ds.sequences)
    rep = audit_model(trainer, split.test, args.metric)
    run_id = args.run_id or Path(args.checkpoint).name
    if args.out:
        write_pid_csv(args.out, [(run_id, args.metric, rep)])
    flags = f" [{';'.join(rep.flags)}]" if rep.flags else ""
    print(f"P_t={rep.P_t:.4f} P_v={rep.P_v:.4f} P_j={rep.P_j:.4f} "
          f"S={rep.S:.4f} R={rep.R:.4f} U_t={rep.U_t:.4f} U_v={rep.U_v:.4f}{flags}")


def cmd_attn_share(args, cfg: PipelineConfig) -> None:
    model, vocab, _ = load_checkpoint(args.checkpoint)
    ds, item_tokens, data_vocab = _load_corpus(args.data)
    check_vocab(vocab, data_vocab)
    split = split_leave_one_out(ds.sequences)
    hists = [history_tokens(h, item_tokens, model.cfg.max_len) for h, _ in split.test]
    t, v, _ = attention_share(model, vocab, hists)
    name = args.name or Path(args.data).name
    if args.out:
        write_share_csv(args.out, [(name, t, v, len(hists))])
    print(f"text share {t:.4f}, vision share {v:.4f} over {len(hists)} sequences")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="synrec", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. train.lr=5e-4 (repeatable)")
        sp.add_argument("--seed", type=int, help="seed for every random stage")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    sp = sub.add_parser("synth", help="generate the planted-synergy corpus")
    common(sp)
    sp.add_argument("--out", required=True, help="dataset directory to write")

    sp = sub.add_parser("tokenize", help="train the quantizers and write item identifiers")
    common(sp)
    sp.add_argument("--data", required=True)

    sp = sub.add_parser("train", help="train the generative recommender")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--variant", choices=VARIANTS)

    sp = sub.add_parser("eval", help="leave-one-out ranking metrics")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", help="metric CSV path")
    sp.add_argument("--split", choices=("test", "valid"), default="test")
    sp.add_argument("--view", choices=(TEXT, VISION), help="feed only one modality's tokens")
    sp.add_argument("--beam", type=int)

    sp = sub.add_parser("pid", help="normalized performance decomposition")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--metric", default="ndcg@10")
    sp.add_argument("--out", help="PID CSV path")
    sp.add_argument("--run-id")
    sp.add_argument("--beam", type=int)

    sp = sub.add_parser("attn-share", help="mean attention share per modality")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", help="attention-share CSV path")
    sp.add_argument("--name", help="dataset label in the CSV")
    return p


COMMANDS = {
    "synth": cmd_synth,
    "tokenize": cmd_tokenize,
    "train": cmd_train,
    "eval": cmd_eval,
    "pid": cmd_pid,
    "attn-share": cmd_attn_share,
}


def run_command(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args.config, args.set, args.seed, getattr(args, "variant", None))
        COMMANDS[args.command](args, cfg)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        msg = str(exc).splitlines()[0] if str(exc) else ""
        print(f"synrec {args.command}: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
