//! Flat, grouped view of trainable parameters.
//!
//! A [`ParameterVector`] is an ordered list of named groups (one weight matrix and one bias
//! vector per layer for an MLP). Linear operations act group-wise and require both operands
//! to share the exact same structure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "group shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            shape,
            data,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Normalization units of this group: each row of a matrix, or the whole vector.
    pub fn units(&self) -> Vec<std::ops::Range<usize>> {
        match self.shape.as_slice() {
            [rows, cols] => (0..*rows).map(|r| r * cols..(r + 1) * cols).collect(),
            _ => vec![0..self.data.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    groups: Vec<ParamGroup>,
}

impl ParameterVector {
    pub fn new(groups: Vec<ParamGroup>) -> Self {
        Self { groups }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }

    pub fn total_len(&self) -> usize {
        self.groups.iter().map(ParamGroup::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            groups: self
                .groups
                .iter()
                .map(|g| ParamGroup::zeros(g.name.clone(), g.shape.clone()))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|g| g.data.iter().copied()).collect()
    }

    /// Rebuilds a vector with this structure from flat values in group order.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.total_len() {
            return Err(Error::contract(format!(
                "expected {} values, got {}",
                self.total_len(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for g in &mut out.groups {
            let n = g.data.len();
            g.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn same_structure(&self, other: &Self) -> bool {
        self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn check_structure(&self, other: &Self) -> Result<()> {
        if self.same_structure(other) {
            Ok(())
        } else {
            Err(Error::contract("parameter vectors have different group structure"))
        }
    }

    fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_structure(other)?;
        let mut out = self.clone();
        for (g, o) in out.groups.iter_mut().zip(&other.groups) {
            for (x, y) in g.data.iter_mut().zip(&o.data) {
                *x = f(*x, *y);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.groups {
            g.data.iter_mut().for_each(|x| *x *= factor);
        }
        out
    }

    /// `self + (alpha * delta + beta * eta)`. The bracket makes swapping the two directions
    /// (with their coefficients) bit-exact.
    pub fn offset(&self, alpha: f64, delta: &Self, beta: f64, eta: &Self) -> Result<Self> {
        self.check_structure(delta)?;
        self.check_structure(eta)?;
        let mut out = self.clone();
        for ((g, d), e) in out.groups.iter_mut().zip(&delta.groups).zip(&eta.groups) {
            for ((x, dx), ex) in g.data.iter_mut().zip(&d.data).zip(&e.data) {
                *x += alpha * dx + beta * ex;
            }
        }
        Ok(out)
    }

    pub fn norm(&self) -> f64 {
        self.groups
            .iter()
            .flat_map(|g| g.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_structure(other)?;
        Ok(self
            .groups
            .iter()
            .zip(&other.groups)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }
}
