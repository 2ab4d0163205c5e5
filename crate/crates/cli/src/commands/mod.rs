pub mod eval;
pub mod infer;
pub mod report;
pub mod synth;
pub mod targets;
pub mod track;
pub mod train;
