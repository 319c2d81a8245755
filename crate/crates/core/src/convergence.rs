//! Numerical check of the joint-training convergence bounds on diagonal quadratics.
//!
//! Two trainable vectors `theta1`, `theta2` and a third, derived vector
//! `w3 = a31 * theta1 + a32 * theta2` are driven by gradient descent on
//!
//! ```text
//! L = g1 * L1(theta1) + g2 * L2(theta2) + g3 * L3(w3)
//! ```
//!
//! with step sizes `1 / (g_j * beta_j)`. The optimality gaps of all three losses
//! are compared against the closed-form right-hand sides, using gradient norms and
//! gradient inner products measured on the realized trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `g1 + g2 + g3 = 1`.
pub const GAMMA_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TheoremError {
    #[error("invalid quadratic loss: {0}")]
    InvalidLoss(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid gamma: {0}")]
    InvalidGamma(String),
    #[error("invalid alpha: {0}")]
    InvalidAlpha(String),
    #[error(
        "infeasible gamma3 = {gamma3}: requires 1 - gamma3 * (a31^2 * beta3 / (beta1 * gamma1) \
         + a32^2 * beta3 / (beta2 * gamma2)) >= 0, i.e. gamma3 <= {limit}"
    )]
    Infeasible { gamma3: f64, limit: f64 },
    #[error("invalid gradient bound: {0}")]
    InvalidBound(String),
    #[error("gradient descent diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

/// `0.5 * sum_k c_k (x_k - x*_k)^2 + offset` with every `c_k > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticLoss {
    pub curvature: Vec<f64>,
    pub minimizer: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

impl QuadraticLoss {
    pub fn new(curvature: Vec<f64>, minimizer: Vec<f64>, offset: f64) -> Result<Self, TheoremError> {
        let q = QuadraticLoss {
            curvature,
            minimizer,
            offset,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), TheoremError> {
        if self.curvature.is_empty() {
            return Err(TheoremError::InvalidLoss("dimension must be at least 1".into()));
        }
        if self.curvature.len() != self.minimizer.len() {
            return Err(TheoremError::Dimension(format!(
                "{} curvatures but {} minimizer entries",
                self.curvature.len(),
                self.minimizer.len()
            )));
        }
        if self.curvature.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(TheoremError::InvalidLoss(
                "curvatures must be finite and positive".into(),
            ));
        }
        if self.minimizer.iter().any(|m| !m.is_finite()) {
            return Err(TheoremError::InvalidLoss("minimizer must be finite".into()));
        }
        if !(self.offset.is_finite() && self.offset >= 0.0) {
            return Err(TheoremError::InvalidLoss(
                "offset must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.curvature.len()
    }

    /// Smoothness constant.
    pub fn beta(&self) -> f64 {
        self.curvature.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// PL constant.
    pub fn mu(&self) -> f64 {
        self.curvature.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .curvature
            .iter()
            .zip(&self.minimizer)
            .zip(x)
            .map(|((c, m), v)| c * (v - m) * (v - m))
            .sum();
        0.5 * s + self.offset
    }

    pub fn min_value(&self) -> f64 {
        self.offset
    }

    pub fn gap(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .curvature
            .iter()
            .zip(&self.minimizer)
            .zip(x)
            .map(|((c, m), v)| c * (v - m) * (v - m))
            .sum();
        0.5 * s
    }

    /// Smallest gap distinguishable from zero at `x`: one rounding unit of
    /// displacement from the minimizer in every coordinate.
    pub fn resolution(&self, x: &[f64]) -> f64 {
        self.curvature
            .iter()
            .zip(&self.minimizer)
            .zip(x)
            .map(|((c, m), v)| {
                let ulp = f64::EPSILON * v.abs().max(m.abs());
                2.0 * c * ulp * ulp
            })
            .sum()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.curvature
            .iter()
            .zip(&self.minimizer)
            .zip(x)
            .map(|((c, m), v)| c * (v - m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremConfig {
    pub losses: [QuadraticLoss; 3],
    pub gamma: [f64; 3],
    pub alpha3: [f64; 2],
    pub iterations: usize,
    pub theta1_init: Vec<f64>,
    pub theta2_init: Vec<f64>,
    /// A-priori `(G1, G2, G3)`; when absent the trajectory maxima are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_bounds: Option<[f64; 3]>,
}

impl TheoremConfig {
    /// Two-dimensional fixture with curvature (0.5, 1) everywhere.
    pub fn reference() -> Self {
        let c = vec![0.5, 1.0];
        let q = |m: [f64; 2]| QuadraticLoss {
            curvature: c.clone(),
            minimizer: m.to_vec(),
            offset: 0.0,
        };
        TheoremConfig {
            losses: [q([1.0, 0.0]), q([0.0, 1.0]), q([1.0, 1.0])],
            gamma: [0.4, 0.4, 0.2],
            alpha3: [0.5, 0.5],
            iterations: 500,
            theta1_init: vec![0.0, 0.0],
            theta2_init: vec![0.0, 0.0],
            gradient_bounds: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TheoremError> {
        let cfg: TheoremConfig = serde_json::from_str(text).map_err(|e| TheoremError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.losses[0].dim()
    }

    pub fn step_sizes(&self) -> [f64; 2] {
        [
            1.0 / (self.gamma[0] * self.losses[0].beta()),
            1.0 / (self.gamma[1] * self.losses[1].beta()),
        ]
    }

    /// `1 - g3 * (a31^2 b3 / (b1 g1) + a32^2 b3 / (b2 g2))`; must be non-negative.
    pub fn feasibility_margin(&self) -> f64 {
        1.0 - self.gamma[2] * self.feasibility_load()
    }

    fn feasibility_load(&self) -> f64 {
        let [b1, b2, b3] = self.betas();
        let [a31, a32] = self.alpha3;
        a31 * a31 * b3 / (b1 * self.gamma[0]) + a32 * a32 * b3 / (b2 * self.gamma[1])
    }

    /// Largest admissible `g3` for the current `g1`, `g2`, `alpha3`.
    pub fn gamma3_limit(&self) -> f64 {
        let load = self.feasibility_load();
        if load == 0.0 {
            f64::INFINITY
        } else {
            1.0 / load
        }
    }

    pub fn betas(&self) -> [f64; 3] {
        [self.losses[0].beta(), self.losses[1].beta(), self.losses[2].beta()]
    }

    pub fn mus(&self) -> [f64; 3] {
        [self.losses[0].mu(), self.losses[1].mu(), self.losses[2].mu()]
    }

    /// `g3 = 0` is accepted so the coupling can be switched off entirely.
    pub fn validate(&self) -> Result<(), TheoremError> {
        for l in &self.losses {
            l.validate()?;
        }
        let d = self.dim();
        if self.losses.iter().any(|l| l.dim() != d) {
            return Err(TheoremError::Dimension(
                "all three losses must share one dimension".into(),
            ));
        }
        if self.theta1_init.len() != d || self.theta2_init.len() != d {
            return Err(TheoremError::Dimension(format!(
                "initial points must have dimension {d}"
            )));
        }
        if self.theta1_init.iter().chain(&self.theta2_init).any(|v| !v.is_finite()) {
            return Err(TheoremError::Dimension("initial points must be finite".into()));
        }
        let [g1, g2, g3] = self.gamma;
        if !(g1 > 0.0 && g1 <= 1.0 && g2 > 0.0 && g2 <= 1.0) {
            return Err(TheoremError::InvalidGamma(
                "gamma1 and gamma2 must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&g3) {
            return Err(TheoremError::InvalidGamma("gamma3 must lie in [0, 1]".into()));
        }
        let sum = g1 + g2 + g3;
        if (sum - 1.0).abs() > GAMMA_SUM_TOLERANCE {
            return Err(TheoremError::InvalidGamma(format!("gamma sums to {sum}, expected 1")));
        }
        // the inner-product bounds enter with the sign of alpha
        if self.alpha3.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(TheoremError::InvalidAlpha(
                "alpha3 entries must be finite and non-negative".into(),
            ));
        }
        if let Some(g) = self.gradient_bounds {
            if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(TheoremError::InvalidBound(
                    "gradient bounds must be finite and non-negative".into(),
                ));
            }
        }
        if self.feasibility_margin() < 0.0 {
            return Err(TheoremError::Infeasible {
                gamma3: g3,
                limit: self.gamma3_limit(),
            });
        }
        Ok(())
    }

    /// `L(theta1, theta2)` including the combined term.
    pub fn total_loss(&self, theta1: &[f64], theta2: &[f64]) -> f64 {
        let w3 = combine3(self.alpha3, theta1, theta2);
        self.gamma[0] * self.losses[0].value(theta1)
            + self.gamma[1] * self.losses[1].value(theta2)
            + self.gamma[2] * self.losses[2].value(&w3)
    }

    /// Gradients of the total loss with respect to `theta1` and `theta2`.
    pub fn total_gradient(&self, theta1: &[f64], theta2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w3 = combine3(self.alpha3, theta1, theta2);
        let g1 = self.losses[0].grad(theta1);
        let g2 = self.losses[1].grad(theta2);
        let g3 = self.losses[2].grad(&w3);
        let [a31, a32] = self.alpha3;
        let [c1, c2, c3] = self.gamma;
        let d1 = g1.iter().zip(&g3).map(|(a, b)| c1 * a + c3 * a31 * b).collect();
        let d2 = g2.iter().zip(&g3).map(|(a, b)| c2 * a + c3 * a32 * b).collect();
        (d1, d2)
    }
}

fn combine3(alpha: [f64; 2], t1: &[f64], t2: &[f64]) -> Vec<f64> {
    t1.iter().zip(t2).map(|(a, b)| alpha[0] * a + alpha[1] * b).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Iterates `0..=T` of the two trained vectors and the combined one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub theta1: Vec<Vec<f64>>,
    pub theta2: Vec<Vec<f64>>,
    pub w3: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.theta1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta1.is_empty()
    }
}

/// Plain gradient descent with `eta_j = 1 / (gamma_j * beta_j)`.
pub fn run_gd(config: &TheoremConfig) -> Result<Trajectory, TheoremError> {
    config.validate()?;
    let [eta1, eta2] = config.step_sizes();
    let mut t1 = config.theta1_init.clone();
    let mut t2 = config.theta2_init.clone();
    let mut traj = Trajectory {
        theta1: Vec::with_capacity(config.iterations + 1),
        theta2: Vec::with_capacity(config.iterations + 1),
        w3: Vec::with_capacity(config.iterations + 1),
    };
    traj.theta1.push(t1.clone());
    traj.theta2.push(t2.clone());
    traj.w3.push(combine3(config.alpha3, &t1, &t2));
    for iteration in 1..=config.iterations {
        let (d1, d2) = config.total_gradient(&t1, &t2);
        for (t, d) in t1.iter_mut().zip(&d1) {
            *t -= eta1 * d;
        }
        for (t, d) in t2.iter_mut().zip(&d2) {
            *t -= eta2 * d;
        }
        if t1.iter().chain(&t2).any(|v| !v.is_finite()) {
            return Err(TheoremError::Diverged { iteration });
        }
        traj.theta1.push(t1.clone());
        traj.theta2.push(t2.clone());
        traj.w3.push(combine3(config.alpha3, &t1, &t2));
    }
    Ok(traj)
}

/// Gradient-norm bounds and extremal inner products along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    /// `(G1^2, G2^2, G3^2)` actually used in the constants.
    pub g_sq: [f64; 3],
    /// Trajectory maxima of the squared gradient norms.
    pub measured_g_sq: [f64; 3],
    /// Lower bound of `<grad L3(w3), grad L1(theta1)>`.
    pub rho13: f64,
    /// Lower bound of `<grad L3(w3), grad L2(theta2)>`.
    pub rho23: f64,
    /// Upper bound of `<grad L1(theta1), grad L2(theta2)>`.
    pub rho12: f64,
}

pub fn measure(config: &TheoremConfig, traj: &Trajectory) -> Measurements {
    let mut g_sq = [0.0f64; 3];
    let (mut rho13, mut rho23, mut rho12) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..traj.len() {
        let g1 = config.losses[0].grad(&traj.theta1[t]);
        let g2 = config.losses[1].grad(&traj.theta2[t]);
        let g3 = config.losses[2].grad(&traj.w3[t]);
        g_sq[0] = g_sq[0].max(dot(&g1, &g1));
        g_sq[1] = g_sq[1].max(dot(&g2, &g2));
        g_sq[2] = g_sq[2].max(dot(&g3, &g3));
        rho13 = rho13.min(dot(&g3, &g1));
        rho23 = rho23.min(dot(&g3, &g2));
        rho12 = rho12.max(dot(&g1, &g2));
    }
    let used = match config.gradient_bounds {
        Some(g) => [g[0] * g[0], g[1] * g[1], g[2] * g[2]],
        None => g_sq,
    };
    Measurements {
        g_sq: used,
        measured_g_sq: g_sq,
        rho13,
        rho23,
        rho12,
    }
}

/// `gamma3^2 * a31^2 * G3^2`.
pub fn delta13(config: &TheoremConfig, m: &Measurements) -> f64 {
    let a = config.alpha3[0];
    config.gamma[2].powi(2) * a * a * m.g_sq[2]
}

/// `gamma3^2 * a32^2 * G3^2`.
pub fn delta23(config: &TheoremConfig, m: &Measurements) -> f64 {
    let a = config.alpha3[1];
    config.gamma[2].powi(2) * a * a * m.g_sq[2]
}

/// The five-term constant bounding the squared error of the combined update.
pub fn delta123(config: &TheoremConfig, m: &Measurements) -> f64 {
    let [b1, b2, b3] = config.betas();
    let [a31, a32] = config.alpha3;
    let c = config.feasibility_margin();
    let p = a31 * b3 / b1;
    let q = a32 * b3 / b2;
    c * c * m.g_sq[2] + p * p * m.g_sq[0] + q * q * m.g_sq[1] - 2.0 * p * c * m.rho13 - 2.0 * q * c * m.rho23
        + 2.0 * p * q * m.rho12
}

/// `rho^t * gap0 + coeff * sum_{k<t} rho^k`.
pub fn geometric_bound(gap0: f64, rho: f64, coeff: f64, t: usize) -> f64 {
    let mut power = 1.0;
    let mut series = 0.0;
    for _ in 0..t {
        series = 1.0 + rho * series;
        power *= rho;
    }
    power * gap0 + coeff * series
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    First,
    Second,
}

impl Side {
    fn index(self) -> usize {
        match self {
            Side::First => 0,
            Side::Second => 1,
        }
    }
}

/// Right-hand side of the bound on `L1` or `L2` at iteration `t`.
pub fn primary_bound_rhs(config: &TheoremConfig, m: &Measurements, t: usize, side: Side) -> f64 {
    let i = side.index();
    let loss = &config.losses[i];
    let init = if i == 0 {
        &config.theta1_init
    } else {
        &config.theta2_init
    };
    let delta = if i == 0 { delta13(config, m) } else { delta23(config, m) };
    let (beta, mu, gamma) = (loss.beta(), loss.mu(), config.gamma[i]);
    geometric_bound(loss.gap(init), 1.0 - mu / beta, delta / (2.0 * beta * gamma * gamma), t)
}

/// Right-hand side of the bound on `L3(w3)` at iteration `t`.
pub fn secondary_bound_rhs(config: &TheoremConfig, m: &Measurements, t: usize) -> f64 {
    let loss = &config.losses[2];
    let w0 = combine3(config.alpha3, &config.theta1_init, &config.theta2_init);
    let (beta, mu) = (loss.beta(), loss.mu());
    geometric_bound(loss.gap(&w0), 1.0 - mu / beta, delta123(config, m) / (2.0 * beta), t)
}

/// Limits of the three right-hand sides as `t` grows.
pub fn asymptotic_gaps(config: &TheoremConfig, m: &Measurements) -> [f64; 3] {
    let [mu1, mu2, mu3] = config.mus();
    let [g1, g2, _] = config.gamma;
    [
        delta13(config, m) / (2.0 * mu1 * g1 * g1),
        delta23(config, m) / (2.0 * mu2 * g2 * g2),
        delta123(config, m) / (2.0 * mu3),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `L1`, `L2`, `L3`, or `premise`.
    pub bound: String,
    pub iteration: usize,
    pub empirical: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCheck {
    /// Mean gap over the last quarter of the run.
    pub tail_gap: f64,
    pub limit: f64,
    /// What is left of the bound's decaying term at the start of the tail window.
    pub transient: f64,
    /// Whether the bound had settled at its limit by the start of the tail window.
    pub settled: bool,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub iterations: usize,
    pub gap: [Vec<f64>; 3],
    pub rhs: [Vec<f64>; 3],
    pub measurements: Measurements,
    pub delta13: f64,
    pub delta23: f64,
    pub delta123: f64,
    pub asymptotic: [AsymptoticCheck; 3],
    /// First violating iteration of each bound, if any.
    pub violations: Vec<Violation>,
}

impl BoundReport {
    /// No pointwise violation and every settled asymptotic check holds.
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.asymptotic.iter().all(|a| !a.settled || a.holds)
    }
}

/// Relative distance from its limit at which a bound counts as settled.
const SETTLED_TOLERANCE: f64 = 1e-6;

/// Run gradient descent and compare every gap with its bound.
pub fn verify(config: &TheoremConfig) -> Result<BoundReport, TheoremError> {
    let traj = run_gd(config)?;
    let m = measure(config, &traj);
    let betas = config.betas();
    let mus = config.mus();

    let gaps: [Vec<f64>; 3] = [
        traj.theta1.iter().map(|x| config.losses[0].gap(x)).collect(),
        traj.theta2.iter().map(|x| config.losses[1].gap(x)).collect(),
        traj.w3.iter().map(|x| config.losses[2].gap(x)).collect(),
    ];
    let d = [delta13(config, &m), delta23(config, &m), delta123(config, &m)];
    let coeff = [
        d[0] / (2.0 * betas[0] * config.gamma[0].powi(2)),
        d[1] / (2.0 * betas[1] * config.gamma[1].powi(2)),
        d[2] / (2.0 * betas[2]),
    ];
    let rhs: [Vec<f64>; 3] = std::array::from_fn(|i| {
        let rho = 1.0 - mus[i] / betas[i];
        let mut out = Vec::with_capacity(traj.len());
        let (mut power, mut series) = (1.0, 0.0);
        for t in 0..traj.len() {
            if t > 0 {
                series = 1.0 + rho * series;
                power *= rho;
            }
            out.push(power * gaps[i][0] + coeff[i] * series);
        }
        out
    });

    let mut violations = Vec::new();
    if let Some(bounds) = config.gradient_bounds {
        for (&measured, g) in m.measured_g_sq.iter().zip(bounds) {
            if measured > g * g {
                violations.push(Violation {
                    bound: "premise".into(),
                    iteration: 0,
                    empirical: measured,
                    rhs: g * g,
                });
            }
        }
    }
    let points = [&traj.theta1, &traj.theta2, &traj.w3];
    for (i, name) in ["L1", "L2", "L3"].iter().enumerate() {
        // a gap already at the rounding floor of its iterate cannot be compared
        let resolvable = |t: usize| gaps[i][t] > config.losses[i].resolution(&points[i][t]);
        if let Some(t) = (0..traj.len()).find(|&t| gaps[i][t] > rhs[i][t] && resolvable(t)) {
            violations.push(Violation {
                bound: (*name).into(),
                iteration: t,
                empirical: gaps[i][t],
                rhs: rhs[i][t],
            });
        }
    }

    let limits = asymptotic_gaps(config, &m);
    let n = traj.len();
    let start = n - n.div_ceil(4);
    let asymptotic = std::array::from_fn(|i| {
        let tail = &gaps[i][start..];
        let tail_gap = tail.iter().sum::<f64>() / tail.len() as f64;
        let transient = (rhs[i][start] - limits[i]).max(0.0);
        let resolution = points[i][start..]
            .iter()
            .map(|x| config.losses[i].resolution(x))
            .fold(0.0, f64::max);
        let settled =
            config.iterations > 0 && (rhs[i][start] - limits[i]).abs() <= SETTLED_TOLERANCE * limits[i].max(1.0);
        AsymptoticCheck {
            tail_gap,
            limit: limits[i],
            transient,
            settled,
            holds: tail_gap <= limits[i] + transient + resolution,
        }
    });

    Ok(BoundReport {
        iterations: config.iterations,
        gap: gaps,
        rhs,
        measurements: m,
        delta13: d[0],
        delta23: d[1],
        delta123: d[2],
        asymptotic,
        violations,
    })
}

/// Random feasible configuration: dimension 2..=4, curvature spread so that `mu < beta`.
pub fn random_feasible_config(seed: u64, iterations: usize) -> TheoremConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=4usize);
    let loss = |rng: &mut ChaCha8Rng| {
        let mut curvature: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
        // force a spread so the smooth and PL constants differ
        curvature[0] = rng.random_range(0.1..0.5);
        curvature[d - 1] = rng.random_range(1.0..2.0);
        QuadraticLoss {
            curvature,
            minimizer: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            offset: rng.random_range(0.0..1.0),
        }
    };
    let losses = [loss(&mut rng), loss(&mut rng), loss(&mut rng)];
    let theta1_init = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let theta2_init = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    loop {
        let raw: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..1.0));
        let s: f64 = raw.iter().sum();
        let cfg = TheoremConfig {
            losses: losses.clone(),
            gamma: [raw[0] / s, raw[1] / s, 1.0 - raw[0] / s - raw[1] / s],
            alpha3: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            iterations,
            theta1_init: Vec::clone(&theta1_init),
            theta2_init: Vec::clone(&theta2_init),
            gradient_bounds: None,
        };
        if cfg.validate().is_ok() {
            return cfg;
        }
    }
}

/// Final `L3` gap as the third minimizer slides toward the midpoint of the first two.
pub fn similarity_probe(base: &TheoremConfig, steps: usize) -> Result<Vec<(f64, f64)>, TheoremError> {
    let mid: Vec<f64> = base.losses[0]
        .minimizer
        .iter()
        .zip(&base.losses[1].minimizer)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let far = base.losses[2].minimizer.clone();
    (0..steps)
        .map(|k| {
            let s = if steps == 1 { 1.0 } else { k as f64 / (steps - 1) as f64 };
            let mut cfg = base.clone();
            cfg.losses[2].minimizer = far.iter().zip(&mid).map(|(f, m)| (1.0 - s) * f + s * m).collect();
            let traj = run_gd(&cfg)?;
            let last = traj.w3.last().expect("trajectory has the initial point");
            Ok((s, cfg.losses[2].gap(last)))
        })
        .collect()
}
