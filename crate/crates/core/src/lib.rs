pub mod camels;
pub mod catalog;
pub mod experiments;
pub mod fdc;
pub mod metrics;
pub mod network;
pub mod synth;
pub mod tensor;
pub mod training;
