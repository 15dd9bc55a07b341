#![allow(dead_code)]
// oracles negate float comparisons so NaN takes the failure branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beam_oracle;
pub mod katz_oracle;
pub mod lstm_oracle;
pub mod world;
