pub mod autodiff;
pub mod chart;
pub mod eval;
pub mod policy;
pub mod reward;
pub mod seed;
pub mod train;
pub mod uarpo;
