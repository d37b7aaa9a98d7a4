from .beam import BeamResult, PrefixTrie, beam_search, beam_search_batch, exhaustive_scores
from .transformer import (
    BackboneConfig,
    ContractError,
    EncoderOutput,
    GenerativeBackbone,
    pad_sequences,
    sequence_log_probs,
)
