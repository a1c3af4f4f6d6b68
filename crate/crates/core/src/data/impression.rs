use serde::{Deserialize, Serialize};

/// Number of auxiliary engagement labels carried by every impression.
pub const NUM_AUX: usize = 5;

/// Names of the auxiliary labels, in storage order.
pub const AUX_NAMES: [&str; NUM_AUX] = [
    "completion",
    "effective_view",
    "long_view",
    "short_view",
    "negative_feedback",
];

/// One logged impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub user_id: u64,
    pub item_id: u64,
    pub features: Vec<f64>,
    pub duration_s: f64,
    pub watch_time_s: f64,
    pub aux_labels: [bool; NUM_AUX],
}

impl Impression {
    pub fn is_valid(&self) -> bool {
        self.duration_s.is_finite()
            && self.duration_s > 0.0
            && self.watch_time_s.is_finite()
            && self.watch_time_s >= 0.0
            && self.features.iter().all(|f| f.is_finite())
    }
}

pub fn watch_times(data: &[Impression]) -> Vec<f64> {
    data.iter().map(|r| r.watch_time_s).collect()
}

pub fn durations(data: &[Impression]) -> Vec<f64> {
    data.iter().map(|r| r.duration_s).collect()
}
