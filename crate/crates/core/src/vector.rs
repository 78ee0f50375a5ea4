//! Dense parameter vectors and the elementwise arithmetic the optimizers are
//! written in terms of.

use std::ops::Index;

use crate::error::{Error, Result};

/// Flat vector of model parameters (or gradients, or moment estimates).
///
/// Every vector produced by this crate has at least one entry and only finite
/// entries; an operation that would produce NaN or infinity returns
/// [`Error::NonFinite`] instead.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        check_finite("construct", &values)?;
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self::filled(len, 0.0)
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(len >= 1, "parameter vectors must have at least one entry");
        assert!(value.is_finite());
        Self {
            values: vec![value; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; present for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn ensure_same_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_same_len(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// Infinity norm of `self - other`.
    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_same_len(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }

    pub fn scale(&self, a: f64) -> Result<ParamVector> {
        self.map("scale", |x| a * x)
    }

    pub(crate) fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<ParamVector> {
        let values: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        check_finite(op, &values)?;
        Ok(Self { values })
    }

    pub(crate) fn zip_map(
        &self,
        other: &ParamVector,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ParamVector> {
        self.ensure_same_len(other)?;
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite(op, &values)?;
        Ok(Self { values })
    }

    /// Builds a vector from values that are already known to be finite and
    /// non-empty (used by hot loops that validate separately).
    pub(crate) fn from_checked(op: &'static str, values: Vec<f64>) -> Result<Self> {
        debug_assert!(!values.is_empty());
        check_finite(op, &values)?;
        Ok(Self { values })
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl<'a> IntoIterator for &'a ParamVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.values.iter()
    }
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

/// `a * x + y`, elementwise. Inputs are left untouched.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    if !a.is_finite() {
        return Err(Error::Domain {
            op: "axpy",
            index: 0,
            value: a,
        });
    }
    x.zip_map(y, "axpy", |xi, yi| a * xi + yi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Mul,
    Div,
    Sqrt,
    Square,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, ElementwiseOp::Mul | ElementwiseOp::Div)
    }

    fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Mul => "mul",
            ElementwiseOp::Div => "div",
            ElementwiseOp::Sqrt => "sqrt",
            ElementwiseOp::Square => "square",
        }
    }
}

/// Applies `op` entry by entry. Binary ops need `y`; unary ops ignore it.
pub fn elementwise(op: ElementwiseOp, x: &ParamVector, y: Option<&ParamVector>) -> Result<ParamVector> {
    let name = op.name();
    match op {
        ElementwiseOp::Mul | ElementwiseOp::Div => {
            let y = y.ok_or_else(|| Error::InvalidHyper(format!("{name} needs a second operand")))?;
            x.ensure_same_len(y)?;
            if op == ElementwiseOp::Div {
                if let Some(index) = y.iter().position(|&v| v == 0.0) {
                    return Err(Error::Domain {
                        op: name,
                        index,
                        value: 0.0,
                    });
                }
                x.zip_map(y, name, |a, b| a / b)
            } else {
                x.zip_map(y, name, |a, b| a * b)
            }
        }
        ElementwiseOp::Sqrt => {
            if let Some(index) = x.iter().position(|&v| v < 0.0) {
                return Err(Error::Domain {
                    op: name,
                    index,
                    value: x[index],
                });
            }
            x.map(name, f64::sqrt)
        }
        ElementwiseOp::Square => x.map(name, |a| a * a),
    }
}
