pub mod autodiff;
pub mod error;
pub mod losses;
pub mod model;
pub mod params;
pub mod data;
pub mod similarity;
pub mod evaluation;
pub mod optim;
pub mod train;
pub mod landscape;
pub mod report;
pub mod config;
pub mod cli;
