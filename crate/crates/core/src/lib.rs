pub mod backtrans;
pub mod compile;
pub mod lang;
pub mod memory;
pub mod sexp;
pub mod source;
pub mod target;
mod sys;
pub mod trace;
