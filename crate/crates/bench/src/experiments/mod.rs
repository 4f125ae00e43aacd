pub mod update_error;
pub mod diag;
pub mod fdr;
pub mod semireal;
