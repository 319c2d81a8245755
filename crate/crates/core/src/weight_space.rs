//! Linear algebra over the trainable weight sets.
//!
//! Image `i` is rendered with `w_i = sum_j alpha[i][j] * theta_j`. The loss of
//! the whole collection is `sum_i gamma_i * L_i(w_i)`, so its gradient with
//! respect to `theta_j` is `sum_i alpha[i][j] * gamma_i * grad L_i(w_i)`.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::imaging::ImageDims;
use crate::siren::{param_count, GradientSet, NetworkArch, WeightSet};

/// Tolerance on `sum(gamma) == 1` for combiners built in working precision.
pub const GAMMA_SUM_TOLERANCE: f64 = 1e-9;

/// The `N` jointly trained weight sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBank {
    sets: Vec<WeightSet>,
}

impl ThetaBank {
    pub fn new(sets: Vec<WeightSet>) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::ShapeMismatch("a weight bank needs at least one set".into()))?;
        if sets.iter().any(|s| !s.is_congruent(first)) {
            return Err(Error::ShapeMismatch(
                "weight sets in a bank must share one architecture".into(),
            ));
        }
        Ok(ThetaBank { sets })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn arch(&self) -> &NetworkArch {
        self.sets[0].arch()
    }

    pub fn sets(&self) -> &[WeightSet] {
        &self.sets
    }

    pub fn sets_mut(&mut self) -> &mut [WeightSet] {
        &mut self.sets
    }

    pub fn get(&self, j: usize) -> &WeightSet {
        &self.sets[j]
    }

    pub fn into_sets(self) -> Vec<WeightSet> {
        self.sets
    }
}

/// Fixed combination coefficients (`M x N`) and per-image loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerSpec {
    alpha: Array2<f64>,
    gamma: Vec<f64>,
}

impl CombinerSpec {
    pub fn new(alpha: Array2<f64>, gamma: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(alpha, gamma, GAMMA_SUM_TOLERANCE)
    }

    /// Like [`CombinerSpec::new`] with a custom tolerance on the gamma sum.
    pub fn with_tolerance(alpha: Array2<f64>, gamma: Vec<f64>, tolerance: f64) -> Result<Self> {
        let (m, n) = alpha.dim();
        if n == 0 || m < n {
            return Err(Error::InvalidCombiner(format!("need M >= N >= 1, got M={m}, N={n}")));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidCombiner("alpha has non-finite entries".into()));
        }
        if gamma.len() != m {
            return Err(Error::InvalidCombiner(format!(
                "{} gamma values for M={m}",
                gamma.len()
            )));
        }
        if let Some(g) = gamma.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
            return Err(Error::InvalidCombiner(format!("gamma value {g} outside (0, 1]")));
        }
        let sum: f64 = gamma.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::InvalidCombiner(format!("gamma sums to {sum}, expected 1")));
        }
        Ok(CombinerSpec { alpha, gamma })
    }

    /// Uniform `1/M` loss weights.
    pub fn with_uniform_gamma(alpha: Array2<f64>) -> Result<Self> {
        let m = alpha.nrows();
        Self::new(alpha, uniform_gamma(m))
    }

    /// Build from `M` rows of `N` coefficients.
    pub fn from_rows(rows: &[Vec<f64>], gamma: Vec<f64>) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidCombiner(format!(
                "row {} has {} entries, row 1 has {n}",
                i + 1,
                rows[i].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let alpha = Array2::from_shape_vec((rows.len(), n), flat).map_err(|e| Error::InvalidCombiner(e.to_string()))?;
        Self::new(alpha, gamma)
    }

    /// `M = N`, `alpha = I`: every image owns one weight set.
    pub fn identity(n: usize) -> Result<Self> {
        Self::with_uniform_gamma(Array2::eye(n))
    }

    pub fn m(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn n(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn alpha_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.alpha.row(i)
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }
}

pub fn uniform_gamma(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// `sum_j alpha_j * theta_j`, elementwise.
pub fn combine(bank: &ThetaBank, alpha_row: ArrayView1<'_, f64>) -> Result<WeightSet> {
    if alpha_row.len() != bank.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients for {} weight sets",
            alpha_row.len(),
            bank.len()
        )));
    }
    let mut out = WeightSet::zeros(*bank.arch());
    for (a, theta) in alpha_row.iter().zip(bank.sets()) {
        // a zero coefficient must not let a non-finite set leak into w_i
        if *a == 0.0 {
            continue;
        }
        out.add_scaled(*a, theta)?;
    }
    Ok(out)
}

/// Two-endpoint interpolation: row `i` (1-based) is `((M-i)/(M-1), (i-1)/(M-1))`.
pub fn default_combiner(n: usize, m: usize) -> Result<CombinerSpec> {
    if n != 2 {
        return Err(Error::UnsupportedCombiner { n });
    }
    if m < 2 {
        return Err(Error::InvalidCombiner(format!(
            "the default combiner needs M >= 2, got {m}"
        )));
    }
    let denom = (m - 1) as f64;
    let alpha = Array2::from_shape_fn((m, 2), |(i, j)| {
        let i = i as f64;
        if j == 0 {
            (denom - i) / denom
        } else {
            i / denom
        }
    });
    CombinerSpec::with_uniform_gamma(alpha)
}

/// Gradient of the collection loss with respect to each `theta_j`.
pub fn aggregate_grads(per_image: &[GradientSet], spec: &CombinerSpec) -> Result<Vec<GradientSet>> {
    aggregate_grads_scaled(per_image, spec, 1.0)
}

/// `scale * aggregate_grads(..)`, with the scale folded into each coefficient as
/// `(scale * alpha_ij) * gamma_i`. Terms with a zero coefficient are skipped and
/// images are merged in index order.
pub fn aggregate_grads_scaled(per_image: &[GradientSet], spec: &CombinerSpec, scale: f64) -> Result<Vec<GradientSet>> {
    if per_image.len() != spec.m() {
        return Err(Error::ShapeMismatch(format!(
            "{} per-image gradients for M={}",
            per_image.len(),
            spec.m()
        )));
    }
    let first = per_image
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no gradients to aggregate".into()))?;
    let arch = *first.arch();
    if per_image.iter().any(|g| *g.arch() != arch || g.len() != first.len()) {
        return Err(Error::ShapeMismatch("per-image gradients are not congruent".into()));
    }
    let mut out = Vec::with_capacity(spec.n());
    for j in 0..spec.n() {
        let mut acc: Option<GradientSet> = None;
        for (i, g) in per_image.iter().enumerate() {
            let c = (scale * spec.alpha[[i, j]]) * spec.gamma[i];
            if c == 0.0 {
                continue;
            }
            match acc.as_mut() {
                None => {
                    let values = g.values().iter().map(|v| c * v).collect();
                    acc = Some(GradientSet::from_values(arch, values)?);
                }
                Some(a) => a.add_scaled(c, g)?,
            }
        }
        out.push(acc.unwrap_or_else(|| GradientSet::zeros(arch)));
    }
    Ok(out)
}

/// Bits per pixel: `N * P * B_P / (M * H * W * C)`.
pub fn bpp(arch: &NetworkArch, n: usize, m: usize, dims: ImageDims, bits_per_param: u32) -> f64 {
    bpp_for_params(param_count(arch), n, m, dims, bits_per_param)
}

/// [`bpp`] for an explicit per-set parameter count.
pub fn bpp_for_params(params: usize, n: usize, m: usize, dims: ImageDims, bits_per_param: u32) -> f64 {
    (n as f64 * params as f64 * bits_per_param as f64) / (m as f64 * dims.values() as f64)
}
