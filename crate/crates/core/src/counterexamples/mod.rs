//! Two shallow networks trained by gradient flow whose outputs do not
//! collapse within a class:
//!
//! - [`three_neuron`]: a three-neuron network under exponential loss on
//!   three points of a non-convex binary problem, integrated with RK4 and
//!   checked against the closed-form solution;
//! - [`mean_field`]: a mean-field ReLU network on `[−2,−1] ∪ [1,2]` whose
//!   normalized classifier approaches a maximum-margin function that is
//!   not constant on either class.

pub mod mean_field;
pub mod three_neuron;

pub use mean_field::{
    f_b_classifier, f_b_ensemble, margin_report, train_mean_field_relu, MarginDataset, MarginReport,
    MeanFieldRecord, MeanFieldRun, Particle, ParticleEnsemble,
};
pub use three_neuron::{
    class_gap, gap_limit, integrate_three_neuron, integrate_three_neuron_with, three_neuron_rhs, StepSchedule,
    ThreeNeuronNetwork, ThreeNeuronState,
};
