//! File formats: EDTF tensors, PGM image dumps, CSV manifests and
//! checkpoint directories.

pub mod checkpoint;
pub mod edtf;
pub mod manifest;
pub mod pgm;
