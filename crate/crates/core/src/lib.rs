//! Acoustic analysis of sustained vowels and read phrases for telling apart
//! pre- and post-treatment recordings, evaluated with nested
//! leave-one-speaker-out SVM classification.

pub mod audio;
pub mod functionals;
pub mod lld;
pub mod normalize;
pub mod pipeline;
pub mod segment;
pub mod stats;
pub mod svm;
pub mod synth;
