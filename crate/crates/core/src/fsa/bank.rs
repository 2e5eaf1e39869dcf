/// Leaf-weight vectors of every pooled tree, stored ragged and contiguous,
/// with the set of trees still in play.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafWeightBank {
    weights: Vec<f64>,
    offsets: Vec<usize>,
    active: Vec<usize>,
}

impl LeafWeightBank {
    /// All-zero bank with every group active.
    pub fn zeros(n_leaves: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(n_leaves.len() + 1);
        offsets.push(0);
        for &n in n_leaves {
            offsets.push(offsets.last().unwrap() + n);
        }
        Self {
            weights: vec![0.0; *offsets.last().unwrap()],
            offsets,
            active: (0..n_leaves.len()).collect(),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn group_len(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    pub fn group(&self, j: usize) -> &[f64] {
        &self.weights[self.offsets[j]..self.offsets[j + 1]]
    }

    pub fn group_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.weights[self.offsets[j]..self.offsets[j + 1]]
    }

    pub fn groups(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.offsets.windows(2).map(|w| &self.weights[w[0]..w[1]])
    }

    /// Active group ids, ascending.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.active.binary_search(&j).is_ok()
    }

    /// Keeps only the listed groups active and zeroes every other group.
    pub fn retain(&mut self, keep: &[usize]) {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        for j in 0..self.n_groups() {
            if keep.binary_search(&j).is_err() {
                self.group_mut(j).fill(0.0);
            }
        }
        self.active = keep;
    }

    pub fn squared_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Flat view of all weights, group after group.
    pub fn as_flat(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Groups holding at least one nonzero weight.
    pub fn nonzero_groups(&self) -> Vec<usize> {
        (0..self.n_groups())
            .filter(|&j| self.group(j).iter().any(|&w| w != 0.0))
            .collect()
    }
}
