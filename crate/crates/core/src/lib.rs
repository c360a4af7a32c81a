pub mod codec;
pub mod config;
pub mod data;
pub mod grad;
pub mod model;
pub mod serving;
pub mod train;
pub mod uic;
