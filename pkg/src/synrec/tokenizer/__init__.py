from .identifiers import (
    ItemIdentifier,
    decode_identifier,
    read_identifier_map,
    tokenize_item,
    tokenize_items,
    write_identifier_map,
)
from .rqvae import (
    CodebookStack,
    InsufficientDataError,
    RQConfig,
    RqVaeModel,
    UntrainedModelError,
    kmeans,
    quantize,
    quantize_batch,
    train_rqvae,
)
from .vocab import BOS, EOS, MASK, PAD, TEXT, VISION, UnifiedVocabulary, build_vocab
