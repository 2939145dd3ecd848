pub mod gap;
pub mod ops;
pub mod response;
pub mod spectra;
pub mod training;
