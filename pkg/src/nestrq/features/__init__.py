"""Filterbank frontend, SpecAugment and the synthetic corpus."""

from .augment import draw_spec_augment_mask, spec_augment
from .corpus import (
    StateTemplate,
    SyntheticCorpusConfig,
    Utterance,
    generate_corpus,
    labels_from_segments,
    state_templates,
)
from .fbank import (
    LOG_FLOOR,
    FbankConfig,
    FeatureSequence,
    extract_fbank,
    hann_window,
    hz_to_mel,
    mel_center_frequencies,
    mel_filterbank,
    mel_to_hz,
)
from .io import (
    read_feature_file,
    read_labels,
    read_manifest,
    write_feature_file,
    write_labels,
    write_manifest,
    write_wav,
)

__all__ = [
    "LOG_FLOOR", "FbankConfig", "FeatureSequence", "StateTemplate", "SyntheticCorpusConfig",
    "Utterance", "draw_spec_augment_mask", "extract_fbank", "generate_corpus", "hann_window",
    "hz_to_mel", "labels_from_segments", "mel_center_frequencies", "mel_filterbank", "mel_to_hz",
    "read_feature_file", "read_labels", "read_manifest", "spec_augment", "state_templates",
    "write_feature_file", "write_labels", "write_manifest", "write_wav",
]
