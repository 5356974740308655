//! Brute-force robustness oracle: exhaustive evaluation over a discretized
//! parameter grid.
//!
//! Only tractable for low-dimensional families (the lens warp's single
//! coefficient, the illumination gain/bias plane); a hard cap on total grid
//! points rejects anything bigger rather than silently subsampling. Grids
//! with an odd point count per axis include the identity parameters, so a
//! vanishing budget degenerates to clean correctness, and doubling the
//! budget while growing r points per axis to 2r-1 keeps the old grid an
//! exact subset: robustness estimates are provably monotone across such
//! nested refinements.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::RealArray;
use crate::perturb::{Scheme, SchemeKind};
use crate::siamese::{Meter, SiameseSystem};

/// Largest grid the oracle will enumerate.
pub const MAX_GRID_POINTS: u64 = 1_000_000;

#[derive(Clone, Debug)]
pub struct DiscretizedVicinity {
    pub scheme: Scheme,
    pub points_per_axis: usize,
    axes: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl DiscretizedVicinity {
    /// Grid with `points_per_axis` values per parameter axis, spanning the
    /// scheme's budget symmetrically. Odd counts >= 3 only, so the identity
    /// sits exactly on the grid.
    pub fn new(scheme: &Scheme, points_per_axis: usize) -> Result<Self> {
        if points_per_axis < 3 || points_per_axis % 2 == 0 {
            return Err(Error::Domain(format!(
                "points per axis must be odd and >= 3, got {points_per_axis}"
            )));
        }
        let axes: Vec<Vec<f64>> = match scheme.kind {
            SchemeKind::Radial => {
                vec![linspace(-scheme.epsilon, scheme.epsilon, points_per_axis)]
            }
            SchemeKind::Illumination => vec![
                linspace(1.0 - scheme.epsilon, 1.0 + scheme.epsilon, points_per_axis),
                linspace(-scheme.epsilon, scheme.epsilon, points_per_axis),
            ],
            SchemeKind::L2 | SchemeKind::LInf | SchemeKind::Patch => {
                return Err(Error::Capability(format!(
                    "grid oracle cannot enumerate {}-dimensional family {}",
                    scheme.param_len(),
                    scheme.name
                )))
            }
        };
        let mut total: u64 = 1;
        for axis in &axes {
            total = total
                .checked_mul(axis.len() as u64)
                .filter(|&t| t <= MAX_GRID_POINTS)
                .ok_or_else(|| {
                    Error::Capability(format!(
                        "grid for {} exceeds {MAX_GRID_POINTS} points",
                        scheme.name
                    ))
                })?;
        }
        Ok(Self {
            scheme: scheme.clone(),
            points_per_axis,
            axes,
        })
    }

    pub fn total_points(&self) -> u64 {
        self.axes.iter().map(|a| a.len() as u64).product()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Mixed-radix decode of a flat grid index into parameters.
    pub fn params_at(&self, mut index: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.axes.len()];
        for (p, axis) in params.iter_mut().zip(&self.axes).rev() {
            *p = axis[(index % axis.len() as u64) as usize];
            index /= axis.len() as u64;
        }
        params
    }
}

/// True iff any grid point misclassifies the pair. Scans in index order and
/// stops at the first flip; the existence answer does not depend on order.
pub fn pair_has_flip(
    sys: &SiameseSystem,
    vicinity: &DiscretizedVicinity,
    alpha: &RealArray,
    beta: &RealArray,
    label: bool,
    meter: &Meter,
) -> Result<bool> {
    let z_beta = sys.encode(beta)?;
    for index in 0..vicinity.total_points() {
        let params = vicinity.params_at(index);
        let img = vicinity.scheme.apply(alpha, &params)?;
        if sys.predict_vs_embedding(&img, &z_beta, meter)? != label {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Fraction of pairs that survive every grid point.
pub fn oracle_robust_fraction(
    sys: &SiameseSystem,
    vicinity: &DiscretizedVicinity,
    pairs: &crate::dataset::PairSet,
    meter: &Meter,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Domain("no pairs for the oracle".into()));
    }
    let flips: Result<Vec<bool>> = (0..pairs.len())
        .into_par_iter()
        .map(|i| {
            pair_has_flip(
                sys,
                vicinity,
                pairs.alpha(i),
                pairs.beta(i),
                pairs.label(i),
                meter,
            )
        })
        .collect();
    let flips = flips?;
    let robust = flips.iter().filter(|&&f| !f).count();
    Ok(robust as f64 / flips.len() as f64)
}
