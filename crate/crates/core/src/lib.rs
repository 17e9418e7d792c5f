//! Numerical laboratory for the coupled wave system
//! `u_tt - Δu = |v|^q`, `v_tt - Δv = |u_t|^p`.
//!
//! * [`analytics`]: critical curves, region classification, lifespan exponents.
//! * [`ode_lab`]: the ODE comparison system for the spatial integrals.
//! * [`testfn_lab`]: the positive test functions `φ₁`, `ψ₁` and their norms.
//! * [`radial_solver`]: radial 3-D integral-equation solver on a characteristic grid.
//! * [`experiments`]: lifespan sweeps and kernel-bound checks.

pub mod analytics;
pub mod experiments;
pub mod ode_lab;
pub mod quadrature;
pub mod radial_solver;
pub mod testfn_lab;
