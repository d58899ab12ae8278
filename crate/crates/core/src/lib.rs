//! Estimation of the interventional mean `E(Y^{a_M = a†})` under frontdoor
//! identification: the mean outcome when only the exposure's effect on the
//! mediator is set to the treated level.

pub mod data;
pub mod design;
pub mod glm;
pub mod inference;
pub mod oracle;
pub mod rng;
pub mod eif;
pub mod estimators;
pub mod presets;
pub mod simulation;
