#![allow(dead_code)]

pub mod checks;
pub mod fixtures;
pub mod metric_oracle;
pub mod ops;
pub mod oracle;
