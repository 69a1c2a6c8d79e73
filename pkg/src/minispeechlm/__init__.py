"""A small numpy speech language model: joint text/audio vocabularies, task
templates, multi-stream decoder-only transformer, masked decoding and
desk-scale evaluation."""

from .evaluation import EvalReport, edit_distance, edit_distance_wer, frame_mse, perplexity
from .fusion import Batch, FusedDataset, FusionSpec, SamplerState, fuse, sample_batch
from .inference import DecodeParams, SpeechLM, Strategy, beam_search, generate
from .model import Interleave, ModelConfig, TrainState, delay_apply, delay_invert, forward, train_step
from .preprocessing import DatasetManifest, load_manifest, scan_dataset_folder, tokenize_dataset
from .template import MultiStreamSequence, TaskTemplate, assemble_sequence, compute_token_weights, parse_template
from .vocabulary import Modality, Vocabulary, build_joint_vocabulary

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "DatasetManifest",
    "DecodeParams",
    "EvalReport",
    "FusedDataset",
    "FusionSpec",
    "Interleave",
    "Modality",
    "ModelConfig",
    "MultiStreamSequence",
    "SamplerState",
    "SpeechLM",
    "Strategy",
    "TaskTemplate",
    "TrainState",
    "Vocabulary",
    "assemble_sequence",
    "beam_search",
    "build_joint_vocabulary",
    "compute_token_weights",
    "delay_apply",
    "delay_invert",
    "edit_distance",
    "edit_distance_wer",
    "forward",
    "frame_mse",
    "fuse",
    "generate",
    "load_manifest",
    "parse_template",
    "perplexity",
    "sample_batch",
    "scan_dataset_folder",
    "tokenize_dataset",
    "train_step",
]
