//! Command-line driver and HTTP annotation service for point-supervised
//! segmentation experiments.

pub mod commands;
pub mod config;
pub mod dataset_dir;
pub mod service;
