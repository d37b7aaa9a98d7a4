"""Model checkpoints: a tensor blob plus a ``key = value`` metadata file."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Tuple, Union

from .backbone.transformer import BackboneConfig, GenerativeBackbone
from .data.config import apply_section, format_kv, parse_kv
from .tensor import blob
from .tokenizer.vocab import UnifiedVocabulary

WEIGHTS_FILE = "model.sgt"
META_FILE = "model.meta"


class CheckpointError(ValueError):
    pass


def save_checkpoint(directory: Union[str, Path], model: GenerativeBackbone, vocab: UnifiedVocabulary,
                    extra: Dict[str, object] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blob.save(d / WEIGHTS_FILE, model.state_dict())
    meta = {f"model.{k}": v for k, v in model.cfg.to_dict().items()}
    meta.update({"vocab.depth": vocab.depth, "vocab.codebook_size": vocab.codebook_size,
                 "vocab.n_suffix": vocab.n_suffix, "vocab.digest": vocab.digest()})
    for k, v in (extra or {}).items():
        meta[f"run.{k}"] = v
    (d / META_FILE).write_text(format_kv(meta), encoding="utf-8")


def load_checkpoint(directory: Union[str, Path]) -> Tuple[GenerativeBackbone, UnifiedVocabulary, Dict[str, str]]:
    d = Path(directory)
    if not (d / META_FILE).exists() or not (d / WEIGHTS_FILE).exists():
        raise CheckpointError(f"{d} is not a checkpoint (needs {WEIGHTS_FILE} and {META_FILE})")
    meta = parse_kv((d / META_FILE).read_text(encoding="utf-8"), str(d / META_FILE))
    vocab = UnifiedVocabulary(int(meta["vocab.depth"]), int(meta["vocab.codebook_size"]), int(meta["vocab.n_suffix"]))
    if meta.get("vocab.digest") != vocab.digest():
        raise CheckpointError(f"{d / META_FILE}: vocabulary digest mismatch")
    model_kv = {k[len("model."):]: v for k, v in meta.items() if k.startswith("model.")}
    cfg = apply_section(BackboneConfig(vocab_size=vocab.size), model_kv, "model")
    model = GenerativeBackbone(cfg)
    model.load_state_dict(blob.load(d / WEIGHTS_FILE))
    model.eval()
    return model, vocab, meta


def check_vocab(meta_vocab: UnifiedVocabulary, data_vocab: UnifiedVocabulary) -> None:
    if meta_vocab.digest() != data_vocab.digest():
        raise CheckpointError("checkpoint vocabulary does not match the dataset's identifiers")
