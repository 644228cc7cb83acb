//! Point pair features and per-patch network input.

mod patch;
mod ppf;

pub use patch::{
    compute_lrf, encode_patch, extract_patch, patch_seed, EncoderConfig, EncodingMode, LocalFrame, LocalPatch,
    PatchEncoding,
};
pub use ppf::{angle, ppf, PPF_NORMAL_TOLERANCE};
