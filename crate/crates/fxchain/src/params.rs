//! Parameter metadata and the normalized ↔ denormalized mapping.
//!
//! Every effect exposes its parameters through [`ParamSpec`]s. Optimizers and
//! networks work on normalized values q ∈ [0,1]; effects consume denormalized
//! values p. Linear parameters map affinely, logarithmic ones exponentially.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Logarithmic,
}

/// Range and scale metadata for one effect parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
    pub unit: String,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, min: f64, max: f64, scale: Scale, unit: impl Into<String>) -> Self {
        let spec = Self {
            name: name.into(),
            min,
            max,
            scale,
            unit: unit.into(),
        };
        spec.validate().expect("invalid parameter spec");
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min < self.max) {
            return Err(Error::OutOfRange(format!(
                "{}: min {} must be < max {}",
                self.name, self.min, self.max
            )));
        }
        if self.scale == Scale::Logarithmic && self.min <= 0.0 {
            return Err(Error::OutOfRange(format!(
                "{}: logarithmic scale requires min > 0, got {}",
                self.name, self.min
            )));
        }
        Ok(())
    }

    /// Maps one normalized value to its denormalized counterpart.
    pub fn denorm(&self, q: f64) -> f64 {
        match self.scale {
            Scale::Linear => (self.max - self.min) * q + self.min,
            Scale::Logarithmic => ((self.max.ln() - self.min.ln()) * q).exp() * self.min,
        }
    }

    /// Exact functional inverse of [`ParamSpec::denorm`].
    pub fn norm(&self, p: f64) -> f64 {
        match self.scale {
            Scale::Linear => (p - self.min) / (self.max - self.min),
            Scale::Logarithmic => (p / self.min).ln() / (self.max.ln() - self.min.ln()),
        }
    }

    /// Tape version of [`ParamSpec::denorm`]; gradients flow through the
    /// affine or exponential mapping.
    pub fn denorm_var<'t>(&self, q: crate::tape::Var<'t>) -> crate::tape::Var<'t> {
        match self.scale {
            Scale::Linear => q.scale(self.max - self.min).offset(self.min),
            Scale::Logarithmic => q.scale(self.max.ln() - self.min.ln()).exp().scale(self.min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// q values in [0, 1].
    Normalized,
    /// p values in physical units.
    Denormalized,
}

/// A parameter value vector tagged with its representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    kind: ParamKind,
}

impl ParamVector {
    /// Builds a normalized vector, rejecting values outside [0, 1].
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        for (i, &q) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&q) || !q.is_finite() {
                return Err(Error::OutOfRange(format!(
                    "normalized value {q} at index {i} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            values,
            kind: ParamKind::Normalized,
        })
    }

    pub fn denormalized(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: ParamKind::Denormalized,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_len(values: usize, specs: usize) -> Result<()> {
    if values != specs {
        return Err(Error::LengthMismatch {
            expected: specs,
            got: values,
        });
    }
    Ok(())
}

/// Maps a normalized vector q onto the ranges described by `specs`.
pub fn denormalize(q: &ParamVector, specs: &[ParamSpec]) -> Result<ParamVector> {
    if q.kind != ParamKind::Normalized {
        return Err(Error::OutOfRange("expected a normalized vector".into()));
    }
    check_len(q.len(), specs.len())?;
    for (i, &v) in q.values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("q[{i}] = {v} outside [0, 1]")));
        }
    }
    let values = q
        .values
        .iter()
        .zip(specs)
        .map(|(&v, spec)| spec.denorm(v))
        .collect();
    Ok(ParamVector::denormalized(values))
}

/// Inverse of [`denormalize`]; rejects values outside their spec range.
pub fn normalize(p: &ParamVector, specs: &[ParamSpec]) -> Result<ParamVector> {
    if p.kind != ParamKind::Denormalized {
        return Err(Error::OutOfRange("expected a denormalized vector".into()));
    }
    check_len(p.len(), specs.len())?;
    let mut values = Vec::with_capacity(p.len());
    for (i, (&v, spec)) in p.values.iter().zip(specs).enumerate() {
        // Tolerate float round-off at the range edges.
        let slack = 1e-9 * (spec.max - spec.min).abs();
        if v < spec.min - slack || v > spec.max + slack {
            return Err(Error::OutOfRange(format!(
                "p[{i}] = {v} outside [{}, {}] for {}",
                spec.min, spec.max, spec.name
            )));
        }
        values.push(spec.norm(v).clamp(0.0, 1.0));
    }
    ParamVector::normalized(values)
}
