//! Image codecs, the checkpoint container, run-configuration files and the
//! on-disk dataset layout.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod image;

pub use self::checkpoint::{load as load_checkpoint, save as save_checkpoint};
pub use self::config::RunConfig;
pub use self::dataset::{DatasetLayout, ImagePair, PairPaths};
pub use self::image::{decode_image, encode_image};
