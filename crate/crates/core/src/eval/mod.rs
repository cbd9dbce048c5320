//! Model evaluation: exact enumeration, AIS, sparseness and probes.

pub mod ais;
pub mod exact;
pub mod probe;
pub mod report;
pub mod responsibility;
pub mod sparseness;

pub use ais::{
    ais_log_partition, base_visible_bias_from_data, temperatures, AisConfig, AisEstimate, Schedule,
};
pub use exact::{
    all_configurations, configuration, exact_log_likelihood, exact_log_partition,
    exact_log_partition_via, exact_model_statistics, log_probabilities, EnumerationSide,
    ENUMERATION_BUDGET,
};
pub use probe::{linear_probe, train_linear_probe, LinearProbe, ProbeConfig};
pub use report::{avg_test_log_prob, parse_key_value, EvalReport};
pub use responsibility::{responsibility_logits, third_order_responsibility};
pub use sparseness::{hoyer_sparseness, representation_sparseness, SparsenessReport};
