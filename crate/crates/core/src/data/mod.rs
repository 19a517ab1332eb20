//! Synthetic datasets, masks, image and checkpoint codecs.

pub mod checkpoint;
pub mod dataset;
pub mod mask;
pub mod netpbm;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{read_dataset, split_dataset, split_indices, write_dataset};
pub use mask::{make_mask, MaskKind};
pub use netpbm::{decode_image, decode_pgm, decode_ppm, encode_pgm, encode_ppm};
pub use synth::{gen_faces, gen_mixture2d, mixture_centers, FaceParams, FaceRanges, MixtureSpec};
