pub mod adversary;
pub mod bench;
pub mod catalog;
pub mod checks;
pub mod config;
pub mod env;
pub mod navigator;
pub mod parallel;
pub mod seed;
pub mod site;
pub mod tensor;
pub mod trainer;
