//! One checker per quantitative inequality, each producing a report with
//! Monte Carlo error bars and a verdict.

pub mod constants;
pub mod norms;
pub mod pointwise;
pub mod report;
pub mod ultra;

pub use norms::{
    beta_profile, hypercontractivity_recursion_check, measure_lsi_check, norm_constant,
    supercontractivity_norm_bound, BetaProfile, LsiDefect, NormConstant,
};
pub use pointwise::{
    gradient_estimate_check, harnack_check, harnack_grid, kernel_lsi_check,
    potential_contraction_check, potential_subinvariance_check,
};
pub use report::{
    summarize, verdict, Budget, Counts, InequalityReport, Verdict, INCONCLUSIVE_REL, Z,
};
pub use ultra::{
    blowup_exponent_fit, fit_blowup, heat_kernel_sup_check, l1_l2_check, relative_kernel_sup,
    ultrabounded_bound_check, uniform_integrability_check, BlowupFit, KernelSup, MSupplier,
};
