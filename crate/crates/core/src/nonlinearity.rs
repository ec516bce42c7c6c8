//! Scalar monotone nonlinearities `F` and their componentwise (Nemytskii)
//! lift to lattice windows.
//!
//! Every nonlinearity carries a monotonicity constant `α ≥ 0` with
//!
//! ```text
//! (x₁ - x₂)(F(x₁) - F(x₂)) ≤ -α (x₁ - x₂)²
//! ```
//!
//! and a Lipschitz bound `Lip_B` valid on `[-B, B]`. Built-in laws carry
//! closed-form constants; closures supplied by the caller carry a claimed `α`
//! that [`verify_monotonicity`] can falsify.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::lattice::LatticeWindow;
use crate::rng::SeededRng;

/// Slack allowed on sampled monotonicity and sector checks.
pub const CHECK_SLACK: f64 = 1e-9;

/// Grid resolution for numerically estimated Lipschitz constants.
const LIP_GRID: usize = 1001;
/// Safety factor applied to grid-estimated Lipschitz constants.
const LIP_SAFETY: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NonlinearityError {
    #[error("F(0) must vanish, got {0}")]
    NonzeroAtOrigin(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("derivative {slope} > 0 at u = {at}: polynomial is not monotone decreasing")]
    NotMonotone { at: f64, slope: f64 },
    #[error("F produced non-finite value {value} at site {site}")]
    NonFinite { site: i64, value: f64 },
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Law {
    /// `F(u) = -u(1 + u²)`.
    Cubic,
    /// `F(u) = -c·u`.
    Linear(f64),
    /// `F(u) = Σ_k c_k u^{2k+1}`.
    OddPolynomial(Vec<f64>),
    Custom(ScalarFn),
}

/// Scalar nonlinearity with `F(0) = 0`, monotonicity constant `α` and a
/// radius-dependent Lipschitz bound.
#[derive(Clone)]
pub struct MonotoneScalarFunction {
    law: Law,
    alpha: f64,
    name: String,
}

impl fmt::Debug for MonotoneScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneScalarFunction")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl MonotoneScalarFunction {
    /// `F(u) = -u(1 + u²)`. Since `F'(u) = -1 - 3u² ≤ -1`, `α = 1` and
    /// `Lip_B = 1 + 3B²`.
    pub fn cubic() -> Self {
        Self {
            law: Law::Cubic,
            alpha: 1.0,
            name: "cubic".to_string(),
        }
    }

    /// `F(u) = -c·u` with `c ≥ 0`; `α = Lip_B = c`.
    pub fn linear(c: f64) -> Result<Self, NonlinearityError> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(NonlinearityError::InvalidParameter("linear slope c must be finite and >= 0"));
        }
        Ok(Self {
            law: Law::Linear(c),
            alpha: c,
            name: "linear".to_string(),
        })
    }

    /// The zero nonlinearity (`α = 0`).
    pub fn zero() -> Self {
        Self::linear(0.0).expect("zero slope is valid")
    }

    /// Odd polynomial `F(u) = c₀u + c₁u³ + c₂u⁵ + …`.
    ///
    /// `F'` is a polynomial in `y = u²`; beyond the Cauchy bound of its roots
    /// it carries the sign of the leading coefficient, so it is checked to be
    /// nonpositive on a dense grid up to twice that bound. `α` is the negated
    /// maximum of `F'` over the grid, which is exact (`-c₀`) when every
    /// coefficient is nonpositive.
    pub fn odd_polynomial(coefficients: Vec<f64>) -> Result<Self, NonlinearityError> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(NonlinearityError::InvalidParameter(
                "odd polynomial needs a nonempty list of finite coefficients",
            ));
        }
        let lead = coefficients
            .iter()
            .rposition(|&c| c != 0.0)
            .map(|k| coefficients[k]);
        let alpha = match lead {
            None => 0.0,
            Some(lead) if lead > 0.0 && coefficients.len() > 1 => {
                return Err(NonlinearityError::NotMonotone {
                    at: f64::INFINITY,
                    slope: f64::INFINITY,
                })
            }
            Some(_) if coefficients.iter().all(|&c| c <= 0.0) => -coefficients[0],
            Some(_) => {
                let deriv: Vec<f64> = coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (2 * k + 1) as f64 * c)
                    .collect();
                let top = deriv.iter().rposition(|&c| c != 0.0).unwrap_or(0);
                let cauchy = 1.0
                    + deriv[..top]
                        .iter()
                        .fold(0.0f64, |m, c| m.max((c / deriv[top]).abs()));
                let y_max = 2.0 * cauchy;
                let mut worst = f64::NEG_INFINITY;
                for k in 0..=20_000 {
                    let y = y_max * k as f64 / 20_000.0;
                    let slope = horner(&deriv, y);
                    if slope > 0.0 {
                        return Err(NonlinearityError::NotMonotone {
                            at: crate::math::sqrt(y),
                            slope,
                        });
                    }
                    worst = worst.max(slope);
                }
                -worst
            }
        };
        Ok(Self {
            law: Law::OddPolynomial(coefficients),
            alpha: alpha.max(0.0),
            name: "custom".to_string(),
        })
    }

    /// Caller-supplied `F` with a claimed monotonicity constant.
    ///
    /// Only `F(0) = 0` is enforced here; the claim itself is checked by
    /// [`verify_monotonicity`]. The Lipschitz bound is estimated on a grid.
    pub fn from_fn(
        name: impl Into<String>,
        alpha: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, NonlinearityError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(NonlinearityError::InvalidParameter("alpha must be finite and >= 0"));
        }
        let at_zero = f(0.0);
        if at_zero != 0.0 {
            return Err(NonlinearityError::NonzeroAtOrigin(at_zero));
        }
        Ok(Self {
            law: Law::Custom(Arc::new(f)),
            alpha,
            name: name.into(),
        })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.law {
            Law::Cubic => -x * (1.0 + x * x),
            Law::Linear(c) => -c * x,
            Law::OddPolynomial(coeffs) => x * horner(coeffs, x * x),
            Law::Custom(f) => f(x),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Coefficients of an odd-polynomial law, if this is one.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.law {
            Law::OddPolynomial(c) => Some(c),
            _ => None,
        }
    }

    /// Slope of a linear law, if this is one.
    pub fn linear_slope(&self) -> Option<f64> {
        match self.law {
            Law::Linear(c) => Some(c),
            _ => None,
        }
    }

    /// Lipschitz constant of `F` on `[-radius, radius]`.
    pub fn lip_on(&self, radius: f64) -> f64 {
        let b = radius.abs();
        match &self.law {
            Law::Cubic => 1.0 + 3.0 * b * b,
            Law::Linear(c) => *c,
            Law::OddPolynomial(coeffs) => {
                let abs: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (2 * k + 1) as f64 * c.abs())
                    .collect();
                horner(&abs, b * b)
            }
            Law::Custom(f) => {
                if b == 0.0 {
                    return 0.0;
                }
                let h = 2.0 * b / (LIP_GRID - 1) as f64;
                let mut worst = 0.0f64;
                let mut prev = f(-b);
                for k in 1..LIP_GRID {
                    let next = f(-b + k as f64 * h);
                    worst = worst.max(((next - prev) / h).abs());
                    prev = next;
                }
                LIP_SAFETY * worst
            }
        }
    }
}

fn horner(coeffs: &[f64], y: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
}

/// Componentwise lift `F̃(u)_i = F(u_i)` on the same window.
pub fn nemytskii(f: &MonotoneScalarFunction, u: &LatticeWindow) -> Result<LatticeWindow, NonlinearityError> {
    let mut values = Vec::with_capacity(u.len());
    for (site, &x) in u.sites().zip(u.values()) {
        let value = f.eval(x);
        if !value.is_finite() {
            return Err(NonlinearityError::NonFinite { site, value });
        }
        values.push(value);
    }
    Ok(LatticeWindow::from_parts_unchecked(u.offset(), values))
}

/// Outcome of a sampled monotonicity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    /// Largest sampled `(x₁-x₂)(F(x₁)-F(x₂)) / (x₁-x₂)²`.
    pub worst_ratio: f64,
    pub alpha: f64,
    pub passes: bool,
}

/// Samples pairs in `[-radius, radius]²` and reports the worst difference
/// quotient. Passes iff it stays below `-α + 1e-9`. Pairs with `x₁ = x₂` are
/// skipped.
pub fn verify_monotonicity(
    f: &MonotoneScalarFunction,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<MonotonicityReport, NonlinearityError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(NonlinearityError::InvalidParameter("radius must be positive"));
    }
    if samples < 2 {
        return Err(NonlinearityError::InvalidParameter("need at least two samples"));
    }
    let mut rng = SeededRng::new(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x1 = rng.uniform(-radius, radius);
        let x2 = rng.uniform(-radius, radius);
        let dx = x1 - x2;
        if dx == 0.0 {
            continue;
        }
        worst = worst.max(dx * (f.eval(x1) - f.eval(x2)) / (dx * dx));
    }
    Ok(MonotonicityReport {
        worst_ratio: worst,
        alpha: f.alpha,
        passes: worst <= -f.alpha + CHECK_SLACK,
    })
}

/// Estimated constants of the sector bound `s·F(s) ≤ -α s² + β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorReport {
    /// Largest `α` with `s·F(s) ≤ -α s²` on the samples (`β = 0`).
    pub alpha_hat: f64,
    /// Smallest `β ≥ 0` making the bound hold with the declared `α`.
    pub beta_hat: f64,
}

pub fn verify_sector_bound(
    f: &MonotoneScalarFunction,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<SectorReport, NonlinearityError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(NonlinearityError::InvalidParameter("radius must be positive"));
    }
    if samples == 0 {
        return Err(NonlinearityError::InvalidParameter("need at least one sample"));
    }
    let mut rng = SeededRng::new(seed);
    let mut alpha_hat = f64::INFINITY;
    let mut beta_hat = 0.0f64;
    for _ in 0..samples {
        let s = rng.uniform(-radius, radius);
        let sf = s * f.eval(s);
        beta_hat = beta_hat.max(sf + f.alpha * s * s);
        if s != 0.0 {
            alpha_hat = alpha_hat.min(-sf / (s * s));
        }
    }
    Ok(SectorReport { alpha_hat, beta_hat })
}
