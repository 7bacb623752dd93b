//! File formats and data loading.

pub mod checkpoint;
pub mod config;
pub mod images;
pub mod manifest;
pub mod sample;

pub use checkpoint::{load_checkpoint, model_config_from_kv, save_checkpoint};
pub use config::KeyValues;
pub use images::{read_map, read_rgb, read_tensor, render_flow, resize_bilinear, write_map_gstn, write_pgm, write_ppm, write_tensor};
pub use manifest::{ManifestRecord, SequenceManifest};
pub use sample::{load_fixation_map, load_inputs, load_sample, load_samples, read_fixation_csv, rescale_fixations, TrainSample};
