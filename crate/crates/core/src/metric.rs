//! Energy-weighted distance on headpoints.
//!
//! States are mapped to modal coordinates `(q, q̇)` when a mode set is
//! available, then compared with the weighted Euclidean norm
//! `sqrt(Σ α_i Δq_i² + Σ α_{n+i} Δq̇_i²)`. The default weights
//! `[ω₁², …, ω_n², 1, …, 1]` make the squared distance to the equilibrium the
//! normalized mechanical energy of the undamped linearization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ModeSet, RealMatrix};
use crate::systems::DdeSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("weight vector is empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "weights must be positive, got {w}"
            )));
        }
        Ok(WeightVector(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        WeightVector::new(self.0.iter().map(|w| w * c).collect())
    }
}

/// `[ω₁², …, ω_n², 1, …, 1]`.
pub fn default_weights(modes: &ModeSet) -> Result<WeightVector> {
    if let Some(w) = modes.frequencies.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::WeightsUndefined(format!(
            "natural frequency {w} is not positive"
        )));
    }
    let mut alpha: Vec<f64> = modes.frequencies.iter().map(|w| w * w).collect();
    alpha.extend(std::iter::repeat_n(1.0, modes.dof()));
    WeightVector::new(alpha)
}

#[derive(Debug, Clone)]
pub struct MetricSpace {
    weights: WeightVector,
    modal: Option<ModeSet>,
    origin: Vec<f64>,
    /// `diag(√α) · T`, where `T` maps a physical offset to modal coordinates.
    whiten: RealMatrix,
    unwhiten: RealMatrix,
}

impl MetricSpace {
    pub fn new(origin: Vec<f64>, weights: WeightVector, modal: Option<ModeSet>) -> Result<Self> {
        let dim = origin.len();
        if weights.len() != dim {
            return Err(Error::Dimension(format!(
                "{} weights for a {dim}-dimensional state",
                weights.len()
            )));
        }
        let transform = match &modal {
            Some(modes) => {
                let n = modes.dof();
                if 2 * n != dim {
                    return Err(Error::Dimension(format!(
                        "{n} modes for a {dim}-dimensional state"
                    )));
                }
                let mut t = RealMatrix::zeros(dim, dim);
                t.view_mut((0, 0), (n, n)).copy_from(&modes.inverse_shapes);
                t.view_mut((n, n), (n, n)).copy_from(&modes.inverse_shapes);
                t
            }
            None => RealMatrix::identity(dim, dim),
        };
        let scale = DVector::from_iterator(dim, weights.as_slice().iter().map(|w| w.sqrt()));
        let whiten = DMatrix::from_diagonal(&scale) * transform;
        let unwhiten = whiten
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("modal transform is singular".into()))?;
        Ok(MetricSpace {
            weights,
            modal,
            origin,
            whiten,
            unwhiten,
        })
    }

    /// Metric centred on the system's desired equilibrium. With `weights =
    /// None` the defaults from the system's vibration modes are used; that
    /// fails with [`Error::WeightsUndefined`] when the system has none. User
    /// weights act on modal coordinates when modes exist and on physical
    /// coordinates otherwise.
    pub fn for_system(system: &DdeSystem, weights: Option<WeightVector>) -> Result<Self> {
        let modes = system.modes().cloned();
        let weights = match (weights, &modes) {
            (Some(w), _) => w,
            (None, Some(m)) => default_weights(m)?,
            (None, None) => {
                return Err(Error::WeightsUndefined(format!(
                    "'{}' has no vibration modes about its equilibrium; supply weights",
                    system.name()
                )))
            }
        };
        MetricSpace::new(system.equilibrium().to_vec(), weights, modes)
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn modal(&self) -> Option<&ModeSet> {
        self.modal.as_ref()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "state has length {}, metric dimension is {}",
                y.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn whitened_offset(&self, a: &[f64], b: &[f64]) -> DVector<f64> {
        let diff = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
        &self.whiten * diff
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        Ok(self.whitened_offset(a, b).norm())
    }

    /// Distance from the origin; panics on a dimension mismatch.
    pub fn radius(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.dim(), "state dimension mismatch");
        self.whitened_offset(y, &self.origin).norm()
    }

    /// Coordinates in which the metric ball is round: `z = L (y − origin)`.
    pub fn to_whitened(&self, y: &[f64]) -> Vec<f64> {
        self.whitened_offset(y, &self.origin)
            .iter()
            .copied()
            .collect()
    }

    pub fn from_whitened(&self, z: &[f64]) -> Vec<f64> {
        let y = &self.unwhiten * DVector::from_column_slice(z);
        y.iter().zip(&self.origin).map(|(d, o)| d + o).collect()
    }

    /// `ρ_i = sqrt(ω_i² q_i² + q̇_i²)` per mode, relative to the origin.
    pub fn modal_energy_coordinates(&self, y: &[f64]) -> Result<Vec<f64>> {
        let modes = self.modal.as_ref().ok_or_else(|| {
            Error::Unsupported("modal energy coordinates need a modal transform".into())
        })?;
        self.check_dim(y)?;
        let n = modes.dof();
        let off: Vec<f64> = y.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        let q = &modes.inverse_shapes * DVector::from_column_slice(&off[..n]);
        let v = &modes.inverse_shapes * DVector::from_column_slice(&off[n..]);
        Ok((0..n)
            .map(|i| ((modes.frequencies[i] * q[i]).powi(2) + v[i] * v[i]).sqrt())
            .collect())
    }

    /// Radius of the largest metric ball around the origin that fits inside
    /// the box `[lower, upper]`.
    pub fn inscribed_radius(&self, lower: &[f64], upper: &[f64]) -> f64 {
        (0..self.dim())
            .map(|k| {
                let gap = (self.origin[k] - lower[k]).min(upper[k] - self.origin[k]);
                // distance to the hyperplane y_k = const is gap / ‖row k of L⁻¹‖
                let row_norm = self.unwhiten.row(k).norm();
                gap / row_norm
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Longest metric length of a box diagonal with the given edge lengths.
    pub fn box_diagonal(&self, edges: &[f64]) -> f64 {
        let dim = self.dim();
        let mut best: f64 = 0.0;
        // flipping every sign gives the same length, so fix the first one
        for mask in 0..(1u32 << dim.saturating_sub(1)) {
            let v: Vec<f64> = edges
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    if k > 0 && mask & (1 << (k - 1)) != 0 {
                        -e
                    } else {
                        *e
                    }
                })
                .collect();
            best = best.max((&self.whiten * DVector::from_vec(v)).norm());
        }
        best
    }
}
