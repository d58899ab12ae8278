//! Shipped structural models and study definitions.

pub const CONTINUOUS_DGM: &str = include_str!("../configs/continuous_dgm.toml");
pub const BINARY_DGM: &str = include_str!("../configs/binary_dgm.toml");
pub const CONFOUNDED_MEDIATOR_DGM: &str = include_str!("../configs/confounded_mediator_dgm.toml");
pub const NHANES_SYNTHETIC_DGM: &str = include_str!("../configs/nhanes_synthetic_dgm.toml");
pub const CONTINUOUS_STUDY: &str = include_str!("../configs/continuous_study.toml");
pub const BINARY_STUDY: &str = include_str!("../configs/binary_study.toml");

/// Interventional mean of the continuous-covariate DGM, from a 10^7-draw
/// Monte Carlo run.
pub const CONTINUOUS_TRUTH: f64 = 0.0144;

pub const MODEL_NAMES: [&str; 4] = ["continuous", "binary", "confounded-mediator", "nhanes-synthetic"];
pub const STUDY_NAMES: [&str; 2] = ["continuous-study", "binary-study"];

pub fn model(name: &str) -> Option<&'static str> {
    match name {
        "continuous" => Some(CONTINUOUS_DGM),
        "binary" => Some(BINARY_DGM),
        "confounded-mediator" => Some(CONFOUNDED_MEDIATOR_DGM),
        "nhanes-synthetic" => Some(NHANES_SYNTHETIC_DGM),
        _ => None,
    }
}

pub fn study(name: &str) -> Option<&'static str> {
    match name {
        "continuous-study" => Some(CONTINUOUS_STUDY),
        "binary-study" => Some(BINARY_STUDY),
        _ => None,
    }
}
