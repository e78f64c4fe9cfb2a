pub mod pathology;
pub mod run_bo;
pub mod smalldata;
pub mod svg;
