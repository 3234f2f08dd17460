//! Numerical checks of the view invariants: exact inversion, linearity,
//! orthogonality and noise preservation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::noise::{certify_noise_preservation, NoiseError, NoiseReport};
use crate::tensor::{derived_rng, ImageTensor};
use crate::view::{Admissibility, View, ViewError};

pub const LINEARITY_TOLERANCE: f64 = 1e-5;
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub trials: usize,
    pub max_abs_error: f64,
    pub bit_exact: bool,
}

impl RoundTrip {
    /// Bit-exact for permutation classes, within tolerance for dense
    /// orthogonal views. Broken views never pass.
    pub fn passes(&self, class: Admissibility) -> bool {
        match class {
            Admissibility::ExactPermutation | Admissibility::SignedPermutation => self.bit_exact,
            Admissibility::GeneralOrthogonal => self.max_abs_error <= ROUND_TRIP_TOLERANCE,
            Admissibility::KnownBroken => false,
        }
    }
}

/// `apply_inverse(apply(x))` against `x` on `trials` Gaussian tensors.
pub fn round_trip(view: &View, trials: usize, seed: u64) -> Result<RoundTrip, ViewError> {
    let mut max_abs_error = 0.0f64;
    let mut bit_exact = true;
    for k in 0..trials {
        let x = ImageTensor::randn(view.dims(), &mut derived_rng(seed, k as u64));
        let back = view.apply_inverse(&view.apply(&x)?)?;
        max_abs_error = max_abs_error.max(back.max_abs_diff(&x));
        bit_exact &= back.bit_eq(&x);
    }
    Ok(RoundTrip { trials, max_abs_error, bit_exact })
}

/// `max |v(αx + βy) - α v(x) - β v(y)|` over `trials` random draws.
pub fn linearity_error(view: &View, trials: usize, seed: u64) -> Result<f64, ViewError> {
    let dims = view.dims();
    let mut worst = 0.0f64;
    for k in 0..trials {
        let mut rng = derived_rng(seed ^ 0x6c69_6e65_6172, k as u64);
        let x = ImageTensor::randn(dims, &mut rng);
        let y = ImageTensor::randn(dims, &mut rng);
        let (alpha, beta): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let combo = x.zip_map(&y, |a, b| alpha * a + beta * b).expect("same dims");
        let lhs = view.apply(&combo)?;
        let (vx, vy) = (view.apply(&x)?, view.apply(&y)?);
        let rhs = vx.zip_map(&vy, |a, b| alpha * a + beta * b).expect("same dims");
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewReport {
    pub spec: String,
    pub admissibility: Admissibility,
    pub round_trip: RoundTrip,
    pub round_trip_pass: bool,
    pub linearity_error: f64,
    pub linearity_pass: bool,
    /// `None` when the implied matrix is too large to form.
    pub orthogonality_residual: Option<f64>,
    pub orthogonality_pass: bool,
    pub noise: NoiseReport,
}

impl ViewReport {
    pub fn all_pass(&self) -> bool {
        self.round_trip_pass && self.linearity_pass && self.orthogonality_pass && self.noise.verdict.is_pass()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Runs every check on `view`.
pub fn verify_view(
    view: &View,
    spec: &str,
    trials: usize,
    noise_samples: usize,
    seed: u64,
    dense_cap: usize,
) -> Result<ViewReport, VerifyError> {
    let class = view.admissibility();
    let rt = round_trip(view, trials, seed)?;
    let lin = linearity_error(view, trials, seed)?;
    let residual = match view.orthogonality_residual(dense_cap) {
        Ok(r) => Some(r),
        Err(ViewError::TooLarge { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let mut noise = certify_noise_preservation(view, noise_samples, seed)?;
    noise.view = spec.to_string();
    Ok(ViewReport {
        spec: spec.to_string(),
        admissibility: class,
        round_trip_pass: rt.passes(class),
        round_trip: rt,
        linearity_pass: lin <= LINEARITY_TOLERANCE,
        linearity_error: lin,
        orthogonality_pass: residual.is_some_and(|r| r < crate::view::ORTHOGONALITY_TOLERANCE),
        orthogonality_residual: residual,
        noise,
    })
}
