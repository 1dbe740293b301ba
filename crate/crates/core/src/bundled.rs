//! Example models shipped with the crate (also under `crates/core/models/`).

use crate::model::EnvironmentModel;

pub const COUNTEREXAMPLE_JSON: &str = include_str!("../models/counterexample.json");
pub const DECOUPLED_JSON: &str = include_str!("../models/decoupled.json");
pub const WEAKLY_COUPLED_JSON: &str = include_str!("../models/weakly_coupled.json");
pub const CROWD_RING_JSON: &str = include_str!("../models/crowd_ring.json");

fn parse(text: &str) -> EnvironmentModel {
    EnvironmentModel::from_json_str(text).expect("bundled model is valid")
}

/// Two agents, `x_{t+1} = u_t`, cost `Σ_z (μ(z) - 1/2)²`, undiscounted.
pub fn counterexample() -> EnvironmentModel {
    parse(COUNTEREXAMPLE_JSON)
}

/// Machine maintenance without any mean-field interaction.
pub fn decoupled() -> EnvironmentModel {
    parse(DECOUPLED_JSON)
}

/// Machine maintenance with contagious breakdowns and congested repairs.
pub fn weakly_coupled() -> EnvironmentModel {
    parse(WEAKLY_COUPLED_JSON)
}

/// Three-location ring with a crowding cost.
pub fn crowd_ring() -> EnvironmentModel {
    parse(CROWD_RING_JSON)
}

pub fn all() -> Vec<EnvironmentModel> {
    vec![counterexample(), decoupled(), weakly_coupled(), crowd_ring()]
}

pub fn by_name(name: &str) -> Option<EnvironmentModel> {
    match name {
        "counterexample" => Some(counterexample()),
        "decoupled" => Some(decoupled()),
        "weakly_coupled" => Some(weakly_coupled()),
        "crowd_ring" => Some(crowd_ring()),
        _ => None,
    }
}
