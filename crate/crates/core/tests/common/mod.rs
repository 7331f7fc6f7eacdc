//! Checks shared by the focused test targets and the acceptance report.
#![allow(dead_code)]

pub mod derivative_checks;
pub mod filter_checks;
pub mod oracle;
