//! Contact-implicit optimization of single steps, and derivative-free gait
//! parameter search over simulated rollouts.

pub mod cio;
pub mod qp;
pub mod shooting;

pub use cio::{
    contacts_near, epsilon_schedule, project_initial_velocity, solve_cio_step, CioContact, CioForce, CioProblem,
    CioSolution, ConeMode, FAMILIES,
};
pub use shooting::{
    optimize_gait, params_of, shoot_trajectory, with_params, AuditRecord, GaitParams, OptimizeResult, ParamBox,
    Rollout, ShootingResult, ShootingSetup,
};
