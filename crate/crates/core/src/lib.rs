#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod instances;
pub mod matcore;
pub mod model;
pub mod region;
pub mod report;
pub mod verifier;
