//! Dense row-major matrices and the named parameter store.
//!
//! Every quantity in the model is rank-2; scalars are `1x1`, vectors are
//! `1xd`. Values are 64-bit throughout.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub const fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}x{}]", self.rows, self.cols)
    }
}

/// A dense matrix with an optional gradient buffer of the same extent.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(rows, cols);
        if values.len() != shape.len() {
            return Err(Error::contract(alloc::format!(
                "tensor {shape} needs {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: Shape::new(rows, cols),
            values: vec![0.0; rows * cols],
            grad: None,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: Shape::new(rows, cols),
            values: vec![value; rows * cols],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::filled(1, 1, value)
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Tensor {
            shape: Shape::new(1, values.len()),
            values: values.to_vec(),
            grad: None,
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::contract("ragged rows"));
            }
            values.extend_from_slice(row);
        }
        Tensor::new(rows.len(), cols, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.shape.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.shape.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.shape.cols;
        &self.values[row * c..(row + 1) * c]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let c = self.shape.cols;
        &mut self.values[row * c..(row + 1) * c]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::contract("gradient length differs from tensor"));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Handle to a tensor held by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    /// Leading rows that are padding and excluded from regularization.
    padding_rows: usize,
}

/// Named, ordered collection of learned tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.add_padded(name, tensor, 0)
    }

    /// Adds a table whose first `padding_rows` rows are reserved for padding.
    pub fn add_padded(&mut self, name: &str, tensor: Tensor, padding_rows: usize) -> ParamId {
        self.entries.push(Entry {
            name: name.to_string(),
            tensor,
            padding_rows,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn padding_rows(&self, id: ParamId) -> usize {
        self.entries[id.0].padding_rows
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.tensor))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    pub fn has_grads(&self) -> bool {
        self.entries.iter().any(|e| e.tensor.grad.is_some())
    }

    /// Serial reduction of one tape's gradients into the stored buffers.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        if grads.per_param.len() != self.entries.len() {
            return Err(Error::contract("gradient set built for a different store"));
        }
        for (entry, g) in self.entries.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                entry.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Euclidean norm over all gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self
            .entries
            .iter()
            .filter_map(|e| e.tensor.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum();
        libm::sqrt(sq)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.values.len()).sum()
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub(crate) per_param: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            per_param: vec![None; n_params],
        }
    }

    /// Gradient of `id`, or `None` when the loss does not depend on it.
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adds another gradient set into this one, element by element.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if other.per_param.len() != self.per_param.len() {
            return Err(Error::contract("gradient sets of different stores"));
        }
        for (mine, theirs) in self.per_param.iter_mut().zip(&other.per_param) {
            match (mine.as_mut(), theirs) {
                (_, None) => {}
                (None, Some(t)) => *mine = Some(t.clone()),
                (Some(m), Some(t)) => {
                    for (a, b) in m.iter_mut().zip(t) {
                        *a += b;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.per_param.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self
            .per_param
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum();
        libm::sqrt(sq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_extent() {
        assert!(Tensor::new(2, 2, vec![1.0; 3]).is_err());
        let t = Tensor::new(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(t.shape(), Shape::new(2, 3));
    }

    #[test]
    fn accumulate_grad_allocates_then_adds() {
        let mut t = Tensor::zeros(1, 2);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn store_lookup_by_name() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros(1, 1));
        let b = store.add_padded("b", Tensor::zeros(3, 2), 1);
        assert_eq!(store.find("b"), Some(b));
        assert_eq!(store.find("a"), Some(a));
        assert_eq!(store.padding_rows(b), 1);
        assert_eq!(store.total_values(), 7);
    }
}
