#![allow(dead_code)]

pub mod dtw_oracle;
pub mod gradcheck;
pub mod planted;
