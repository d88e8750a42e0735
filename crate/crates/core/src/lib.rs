//! Graph-augmented convolutional networks for next-day direction prediction
//! on five US stock indices.
//!
//! The pipeline runs bottom-up: [`dataprep`] turns market CSV files into
//! normalised windows, [`graphbuild`] derives a feature correlation graph,
//! [`model`] assembles networks from graph and convolution stages,
//! [`trainer`] fits them and scores macro-F1, and [`backtest`] converts class
//! predictions into trading PnL.

#![allow(clippy::needless_range_loop)]

pub mod backtest;
pub mod dataprep;
pub mod dataset;
pub mod error;
pub mod graphbuild;
pub mod market;
pub mod model;
pub mod report;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use market::{Market, NUM_MARKETS};
