pub mod decode;
pub mod evaluate;
pub mod gradcheck;
pub mod predict;
pub mod synth;
pub mod train;
pub mod validate;
