//! Physics-informed identification of active stress in a nonlinear,
//! anisotropic hyperelastic tissue model.

pub mod activation;
pub mod autodiff;
pub mod constitutive;
pub mod datagen;
pub mod exec;
pub mod experiments;
pub mod losses;
pub mod networks;
pub mod training;
