from .corpus import (Utterance, frame_targets, load_dataset, save_dataset, split_word_alignment,
                     stacked_targets)
from .frontend import FrontendConfig, logmel, stack_frames
from .synth import SynthCorpus, SynthSpec, synth_corpus

__all__ = ["FrontendConfig", "SynthCorpus", "SynthSpec", "Utterance", "frame_targets", "load_dataset",
           "logmel", "save_dataset", "split_word_alignment", "stack_frames", "stacked_targets",
           "synth_corpus"]
