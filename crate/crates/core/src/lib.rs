//! Bayesian panel vector autoregressions at scale.
//!
//! Each equation of the stacked system is estimated on its own: a QR
//! rotation splits the sample into a part that identifies the small
//! own-country coefficient block and a part that only sees the huge
//! cross-country block. The cross-country block gets a fast Gaussian
//! approximation by message passing under a Horseshoe prior; the own block
//! is then sampled exactly by Gibbs against a plug-in likelihood. Posterior
//! draws reassemble into full systems for forecasting, density scoring and
//! connectedness analysis.
//!
//! Module map:
//! - [`panel`]: data model, transforms, alignment, per-equation designs
//! - [`rotation`]: the orthogonal split of each equation
//! - [`horseshoe`]: shrinkage scales, their EM updates and Gibbs conditionals
//! - [`vamp`]: message-passing fit of the stacked block
//! - [`gibbs`]: exact sampler for the own block
//! - [`pvar`]: whole-panel orchestration and system assembly
//! - [`forecast`]: simulation, scoring, recursive evaluation
//! - [`spillover`]: variance decompositions and spillover indices
//! - [`sim`]: synthetic systems with known coefficients
//! - [`rng`]: deterministic seed derivation
//! - [`stats`]: small numeric helpers shared by the above

pub mod error;
pub mod forecast;
pub mod gibbs;
pub mod horseshoe;
pub mod panel;
pub mod pvar;
pub mod rng;
pub mod rotation;
pub mod sim;
pub mod spillover;
pub mod stats;
pub mod vamp;

pub use error::{Error, Result};
pub use forecast::{
    recursive_exercise, EvalPlan, Evaluation, ForecastDistribution, ForecastModel, PvarModel,
    ScoreTable,
};
pub use gibbs::{run_equation_mcmc, ChainDraws, McmcConfig, PluginLikelihood};
pub use panel::{
    align_panel, build_equation_design, load_dataset, EquationDesign, Month, PanelDataset,
    Transform, VariableSpec,
};
pub use pvar::{assemble_system_draw, estimate_pvar, PanelDims, PvarPosterior, SystemDraw};
pub use rotation::{qr_rotation, RotationSplit};
pub use sim::{simulate_pvar, SimSpec, SimTruth};
pub use spillover::{fevd, spillover_recursion, FevdMatrix, SpilloverResults};
pub use vamp::{vamp_fit, ApproxPosterior, VampConfig};
