#![allow(dead_code)]

pub mod fixtures;
pub mod search_oracle;
