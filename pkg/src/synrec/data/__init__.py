from .config import ConfigError, apply_section, format_kv, parse_kv, parse_overrides, read_config, split_sections
from .dataset import (
    DanglingReferenceError,
    Dataset,
    load_dataset,
    load_identifiers,
    read_interactions,
    save_dataset,
    save_identifiers,
    write_interactions,
)
from .synthetic import InfeasibleConfigError, SynthConfig, generate_synthetic
