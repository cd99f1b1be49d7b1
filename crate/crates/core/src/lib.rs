// NaN must fail these guards, hence `!(x > 0.0)`; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fields;
pub mod flow;
pub mod io;
pub mod objective;
pub mod phantom;
pub mod reorient;
pub mod spd3;
pub mod verify;

pub use error::{Error, Result};
