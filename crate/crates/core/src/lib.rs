//! Nash equilibria, subsidy sensitivities and budget-constrained intervention
//! design for network games in which agents choose both actions and link
//! intensities.

pub mod benchmark;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod general;
pub mod model;
pub mod planner;
pub mod sensitivity;

pub use equilibrium::{
    best_response_actions, best_response_links, solve_equilibrium, solve_equilibrium_with, verify_proposition1,
    EquilibriumReport, Prop1Residuals, SolverOptions,
};
pub use error::{Error, Result};
pub use model::{
    agent_utility, planner_payment, welfare, GameParameters, Intervention, StrategyProfile, SubsidyLayout, WelfareSpec,
};
pub use sensitivity::{
    build_spillover_matrix, d_actions_d_beta, d_actions_d_sigma, d_welfare, finite_difference_oracle, Param,
    SensitivityReport, SpilloverMatrix,
};
pub use planner::{
    check_theorem1_structure, kkt_check, optimize_intervention, optimize_with, restricted_optimize, EndogenousModel,
    KKTReport, Mode, OptimizationResult, PairCheck, PairVerdict, PlannerModel, PlannerOptions, StructureVerdicts,
    TheoremPart,
};
pub use benchmark::{check_theorem2, optimize_benchmark, solve_benchmark, BenchmarkEquilibrium, BenchmarkModel};
pub use general::{
    check_theorem3, classify_cost, classify_spillover, general_best_response, optimize_general, solve_general, solve_general_with,
    Curvature, GeneralGame, GeneralModel, PowerFamilySpec,
};
pub use experiments::{
    generate_example1_instance, run_example1, run_theorem_campaign, write_example1_csv, CampaignConfig,
    CampaignSummary, Example1Config, Example1Row,
};
