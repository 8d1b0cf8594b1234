//! Dense linear algebra used by the stepping map and the modal metric.
//!
//! Everything here works on small dense matrices (state dimension at most a
//! handful of entries), so the routines favour accuracy over asymptotics.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;

/// Largest 1-norm for which the degree-13 diagonal Padé approximant reaches
/// double precision without scaling.
const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn check_square_finite(a: &RealMatrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{what} has non-finite entries"
        )));
    }
    Ok(())
}

fn check_step(h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "time step must be positive, got {h}"
        )));
    }
    Ok(())
}

fn norm_1(a: &RealMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Exponential of an arbitrary square matrix by scaling and squaring with a
/// degree-13 Padé approximant.
fn expm(a: &RealMatrix) -> RealMatrix {
    let n = a.nrows();
    let ident = RealMatrix::identity(n, n);
    if n == 0 {
        return ident;
    }
    let norm = norm_1(a);
    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);

    let b = &PADE_13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// `e^{A h}`.
pub fn matrix_exponential(a: &RealMatrix, h: f64) -> Result<RealMatrix> {
    check_square_finite(a, "A")?;
    check_step(h)?;
    Ok(expm(&(a * h)))
}

/// `∫₀ʰ e^{A(h−s)} ds`, read off the top-right block of the exponential of
/// the augmented matrix `[[A, I], [0, 0]]·h`. Valid for singular `A`.
pub fn exp_integral(a: &RealMatrix, h: f64) -> Result<RealMatrix> {
    check_square_finite(a, "A")?;
    check_step(h)?;
    let n = a.nrows();
    let mut aug = RealMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    aug.view_mut((0, n), (n, n)).scale_mut(h);
    let e = expm(&aug);
    Ok(e.view((0, n), (n, n)).into_owned())
}

/// Generalized eigen-decomposition of the undamped pair `(K, M)` without any
/// sign requirement on the eigenvalues.
///
/// `eigenvalues` are `ω²` for oscillatory modes and negative for modes that
/// grow exponentially (an inverted pendulum without control, for example).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBasis {
    pub eigenvalues: Vec<f64>,
    /// Mass-normalized mode shapes, one per column.
    pub shapes: RealMatrix,
    pub inverse_shapes: RealMatrix,
}

impl ModalBasis {
    pub fn dof(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Every mode oscillates (all eigenvalues strictly positive).
    pub fn is_oscillatory(&self) -> bool {
        self.eigenvalues.iter().all(|&l| l > 0.0)
    }
}

/// Natural frequencies and mass-normalized mode shapes of an undamped
/// mechanical system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub frequencies: Vec<f64>,
    pub shapes: RealMatrix,
    pub inverse_shapes: RealMatrix,
}

impl ModeSet {
    pub fn dof(&self) -> usize {
        self.frequencies.len()
    }

    pub fn basis(&self) -> ModalBasis {
        ModalBasis {
            eigenvalues: self.frequencies.iter().map(|w| w * w).collect(),
            shapes: self.shapes.clone(),
            inverse_shapes: self.inverse_shapes.clone(),
        }
    }
}

impl TryFrom<ModalBasis> for ModeSet {
    type Error = Error;

    fn try_from(basis: ModalBasis) -> Result<Self> {
        if let Some(bad) = basis.eigenvalues.iter().find(|&&l| l <= 0.0) {
            return Err(Error::NoVibrationModes(format!(
                "generalized eigenvalue {bad} is not positive"
            )));
        }
        Ok(ModeSet {
            frequencies: basis.eigenvalues.iter().map(|l| l.sqrt()).collect(),
            shapes: basis.shapes,
            inverse_shapes: basis.inverse_shapes,
        })
    }
}

fn check_symmetric(a: &RealMatrix, what: &str) -> Result<()> {
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidInput(format!("{what} is not symmetric")));
            }
        }
    }
    Ok(())
}

pub fn modal_basis(mass: &RealMatrix, stiffness: &RealMatrix) -> Result<ModalBasis> {
    check_square_finite(mass, "M")?;
    check_square_finite(stiffness, "K")?;
    if mass.shape() != stiffness.shape() {
        return Err(Error::Dimension(format!(
            "M is {:?} but K is {:?}",
            mass.shape(),
            stiffness.shape()
        )));
    }
    check_symmetric(mass, "M")?;
    check_symmetric(stiffness, "K")?;

    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("M is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("M is numerically singular".into()))?;
    let reduced = &l_inv * stiffness * l_inv.transpose();
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let eig = SymmetricEigen::new(reduced);

    let n = mass.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let mut vecs = RealMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[k]);
        let mut v = eig.eigenvectors.column(k).into_owned();
        // fix the sign so the largest component is positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        vecs.set_column(col, &v);
    }

    let shapes = l_inv.transpose() * &vecs;
    let inverse_shapes = vecs.transpose() * l.transpose();
    Ok(ModalBasis {
        eigenvalues,
        shapes,
        inverse_shapes,
    })
}

/// Undamped natural frequencies `ω_i = sqrt(λ_i)` of `K φ = λ M φ` and the
/// mass-normalized mode shapes. Fails when any eigenvalue is not positive, in
/// which case the caller has to fall back to user-chosen weights.
pub fn undamped_modes(mass: &RealMatrix, stiffness: &RealMatrix) -> Result<ModeSet> {
    ModeSet::try_from(modal_basis(mass, stiffness)?)
}
