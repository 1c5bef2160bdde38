use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stance_core::Dataset;

/// Seeded random labeling order; the first `required_n` documents form the sample.
#[derive(Debug, Clone, Serialize)]
pub struct SamplePlan {
    pub seed: u64,
    pub required_n: usize,
    order: Vec<String>,
    #[serde(skip)]
    position: HashMap<String, usize>,
}

impl SamplePlan {
    pub fn new(dataset: &Dataset, seed: u64, required_n: usize) -> Self {
        let mut order: Vec<String> = dataset.iter().map(|d| d.id.clone()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let required_n = required_n.min(order.len());
        let position = order.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        SamplePlan {
            seed,
            required_n,
            order,
            position,
        }
    }

    /// Ids of the planned sample in labeling order.
    pub fn sample(&self) -> &[String] {
        &self.order[..self.required_n]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.position.get(id).copied()
    }

    pub fn in_sample(&self, id: &str) -> bool {
        self.position(id).is_some_and(|p| p < self.required_n)
    }
}
