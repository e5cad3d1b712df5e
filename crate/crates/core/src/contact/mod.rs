//! Contact detection and localization from proprioception alone.

mod cpf;
mod observer;

pub use cpf::{
    active_surface, active_surface_with_fallback, cpf_localize, cpf_localize_with, measurement_cost,
    measurement_cost_raw, ContactEstimate, ContactEvidence, CpfParams, Particle,
};
pub use observer::{exceeds, run_observer, Detector, ObserverState};
