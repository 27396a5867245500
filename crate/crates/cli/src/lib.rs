//! Pipeline orchestration for the `safemon` command.

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod stage;

pub use config::PipelineConfig;
pub use pipeline::Pipeline;
pub use stage::Stage;
