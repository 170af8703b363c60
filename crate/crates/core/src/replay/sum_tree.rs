/// Binary sum tree over a fixed number of non-negative leaves.
///
/// Internal nodes are recomputed from their children on every update instead
/// of being patched with deltas, so totals never drift.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        debug_assert!(value >= 0.0);
        let mut idx = self.leaves + i;
        self.nodes[idx] = value;
        while idx > 1 {
            idx /= 2;
            self.nodes[idx] = self.nodes[2 * idx] + self.nodes[2 * idx + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`, for `mass` in
    /// `[0, total)`. Zero-valued leaves are never returned while the total is
    /// positive.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut idx = 1;
        while idx < self.leaves {
            let left = self.nodes[2 * idx];
            let right = self.nodes[2 * idx + 1];
            if mass < left || right <= 0.0 {
                idx *= 2;
            } else {
                mass -= left;
                idx = 2 * idx + 1;
            }
        }
        idx - self.leaves
    }
}
