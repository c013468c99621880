//! Synthetic data generators.

mod community;
mod particles;
mod repressilator;
mod traffic;
mod undersample;

pub use community::{two_block_community, CommunityConfig, CommunityData};
pub use particles::{
    initial_particles, interaction_graph, pair_force, particle_derivative, particle_energy, positions,
    simulate_multi_particle, ParticleParams, ParticleRollout, COLLISION_DISTANCE, ROLLOUT_DT, ROLLOUT_HORIZON,
};
pub use repressilator::{
    ensemble_mean, first_peak_time, mean_field_trajectory, tau_leap, tau_leap_repressilator, Propensity, Reaction,
    ReactionNetwork, RepressilatorRates, TauLeapConfig, INITIAL_STATE, N_SPECIES,
};
pub use traffic::{station_phase, synth_traffic, TrafficConfig, TrafficData};
pub use undersample::{add_time_features, bernoulli_mask, bernoulli_undersample, IrregularSeries};
