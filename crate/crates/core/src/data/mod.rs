//! Skeleton datasets: container IO, raw converters, modality streams, splits,
//! label-fraction subsets and the synthetic corpus.

mod container;
mod layout;
mod raw;
mod semi;
mod sequence;
mod split;
mod streams;
mod synth;

pub use container::{
    load_dataset, open_dataset, read_index, read_raw_sequences, write_dataset, Dataset, DatasetIndex, IndexEntry,
    BLOB_FILE, CONTAINER_VERSION, INDEX_FILE, LAYOUT_FILE, SPLITS_FILE,
};
pub use layout::SkeletonLayout;
pub use raw::{ingest, parse_ntu_name, parse_ntu_skeleton, parse_pku_clip, NtuName, RawDataset};
pub use semi::{semi_subset, stratified_count};
pub use sequence::{downsample_frames, resample_indices, SampleMeta, SkeletonSequence, TARGET_FRAMES};
pub use split::{Benchmark, DatasetSplit, SplitDefinition, XsetRule, XsubRule, XviewRule};
pub use streams::{derive_stream, ModalityStream, StreamKind};
pub use synth::{class_hue, shuffle_prompts_across_classes, synth_generate, MotionTemplate, SynthConfig, SynthCorpus};
