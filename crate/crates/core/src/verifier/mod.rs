//! Executable checks of the converse argument.

pub mod f_epsilon;
pub mod fixed_point;
pub mod lemmas;
pub mod walkthrough;

pub use f_epsilon::{check_f_epsilon, f_epsilon};
pub use fixed_point::{solve_fixed_point, solve_fixed_point_law, FixedPointResult};
pub use lemmas::{
    check_cramer_rao, check_debruijn, check_dembo, check_entropy_path, check_fisher_convolution, check_fisher_dpi,
    check_fisher_shift,
};
pub use walkthrough::{converse_walkthrough, StageReport, WalkthroughReport};
