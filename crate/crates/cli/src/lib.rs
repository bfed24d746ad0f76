//! Command-line front end of the `hbnspec` toolkit: configuration,
//! flat-file formats and the subcommands.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod io;

/// Exit code for unreadable or invalid input data.
pub const EXIT_INPUT: i32 = 1;
/// Exit code for an invalid configuration.
pub const EXIT_CONFIG: i32 = 2;
