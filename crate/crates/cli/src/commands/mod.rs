pub mod eval;
pub mod gradcheck;
pub mod score;
pub mod synth;
pub mod train;
