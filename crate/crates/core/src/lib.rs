pub mod attack;
pub mod audio;
pub mod classifier;
pub mod codec;
pub mod detection;
pub mod eval;
pub mod learners;
pub mod rng;
pub mod spectral;
pub mod synth;
pub mod transforms;
