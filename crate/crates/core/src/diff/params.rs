//! Flat learnable-parameter storage split into named groups.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Parameter values and their gradient accumulators.
///
/// Groups are laid out back to back in insertion order, so they are disjoint
/// and cover `values` exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    grads: Vec<f64>,
    groups: Vec<ParamGroup>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows x cols` group filled by `init`. Panics on duplicate names.
    pub fn add_group(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        mut init: impl FnMut() -> f64,
    ) -> &ParamGroup {
        assert!(
            self.group_index(name).is_none(),
            "duplicate parameter group `{name}`"
        );
        let offset = self.values.len();
        for _ in 0..rows * cols {
            self.values.push(init());
        }
        self.grads.resize(self.values.len(), 0.0);
        self.groups.push(ParamGroup {
            name: name.to_string(),
            offset,
            rows,
            cols,
        });
        self.groups.last().expect("just pushed")
    }

    fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.group_index(name).map(|i| &self.groups[i])
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Panics if the group does not exist.
    pub fn slice(&self, name: &str) -> &[f64] {
        let g = self.expect_group(name);
        &self.values[g.range()]
    }

    pub fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let range = self.expect_group(name).range();
        &mut self.values[range]
    }

    pub fn grad_slice(&self, name: &str) -> &[f64] {
        let g = self.expect_group(name);
        &self.grads[g.range()]
    }

    pub fn matrix(&self, name: &str) -> Matrix {
        let g = self.expect_group(name);
        Matrix::from_vec(g.rows, g.cols, self.values[g.range()].to_vec())
    }

    fn expect_group(&self, name: &str) -> &ParamGroup {
        self.group(name)
            .unwrap_or_else(|| panic!("unknown parameter group `{name}`"))
    }

    /// Rebuilds a store from a group table and values (checkpoint loading).
    pub fn from_parts(groups: Vec<ParamGroup>, values: Vec<f64>) -> Option<Self> {
        let mut expected = 0;
        for g in &groups {
            if g.offset != expected {
                return None;
            }
            expected += g.len();
        }
        if expected != values.len() {
            return None;
        }
        let grads = vec![0.0; values.len()];
        Some(Self {
            values,
            grads,
            groups,
        })
    }
}
