//! Truncated two-sided `ℓ₂` sequences and the nearest-neighbour difference
//! operators acting on them.
//!
//! A [`LatticeWindow`] stores the sites `offset, offset + 1, ..,
//! offset + len - 1` of a sequence `(u_i)_{i ∈ ℤ}` and treats every site outside
//! that range as zero. Under this zero-extension all operators below are exact:
//! the difference operators return a window one site wider on each side, so
//! nothing is clipped.
//!
//! Sign conventions:
//!
//! ```text
//! (Λu)_i  = u_{i-1} - 2 u_i + u_{i+1}
//! (D⁺u)_i = u_{i+1} - u_i
//! (D⁻u)_i = u_{i-1} - u_i
//! ```
//!
//! With these conventions `D⁻` is the adjoint of `D⁺`, the two commute, and
//! `Λ = -D⁺D⁻ = -D⁻D⁺`, so `⟨Λu, u⟩ = -‖D⁺u‖² ≤ 0`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::math;

/// Errors raised by lattice constructors and checked reductions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatticeError {
    #[error("lattice window must hold at least one site")]
    EmptyWindow,
    #[error("non-finite value {value} at site {site}")]
    NonFinite { site: i64, value: f64 },
    #[error("reduction overflowed to a non-finite value")]
    Overflow,
}

/// Finite window of a two-sided sequence, zero outside the stored sites.
#[derive(Clone, Debug)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "RawWindow", deny_unknown_fields)
)]
pub struct LatticeWindow {
    offset: i64,
    values: Vec<f64>,
}

#[cfg(feature = "serde")]
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    offset: i64,
    values: Vec<f64>,
}

#[cfg(feature = "serde")]
impl TryFrom<RawWindow> for LatticeWindow {
    type Error = LatticeError;

    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        LatticeWindow::new(raw.offset, raw.values)
    }
}

impl LatticeWindow {
    /// Window starting at site `offset`. Rejects empty or non-finite data.
    pub fn new(offset: i64, values: Vec<f64>) -> Result<Self, LatticeError> {
        if values.is_empty() {
            return Err(LatticeError::EmptyWindow);
        }
        if let Some((k, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LatticeError::NonFinite {
                site: offset + k as i64,
                value,
            });
        }
        Ok(Self { offset, values })
    }

    /// `len` zeros starting at `offset`; a zero-length request yields one site.
    pub fn zeros(offset: i64, len: usize) -> Self {
        Self {
            offset,
            values: vec![0.0; len.max(1)],
        }
    }

    /// Window over the symmetric site range `[-halfwidth, halfwidth]`.
    pub fn centered_zeros(halfwidth: usize) -> Self {
        Self::zeros(-(halfwidth as i64), 2 * halfwidth + 1)
    }

    /// Unit vector `e_site`.
    pub fn unit(site: i64) -> Self {
        Self {
            offset: site,
            values: vec![1.0],
        }
    }

    pub fn from_fn(offset: i64, len: usize, mut f: impl FnMut(i64) -> f64) -> Result<Self, LatticeError> {
        Self::new(offset, (0..len as i64).map(|k| f(offset + k)).collect())
    }

    pub(crate) fn from_parts_unchecked(offset: i64, values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self { offset, values }
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; windows hold at least one site.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One past the last stored site.
    pub fn end(&self) -> i64 {
        self.offset + self.values.len() as i64
    }

    pub fn sites(&self) -> Range<i64> {
        self.offset..self.end()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at `site`, zero outside the window.
    pub fn get(&self, site: i64) -> f64 {
        if site < self.offset || site >= self.end() {
            0.0
        } else {
            self.values[(site - self.offset) as usize]
        }
    }

    /// True when every stored value is zero.
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Largest absolute value over the window.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Restrict or zero-extend onto the sites `[offset, offset + len)`.
    ///
    /// Mass outside the target range is dropped; this is the clip used by the
    /// fixed-window integrator.
    pub fn clip_to(&self, offset: i64, len: usize) -> Self {
        Self::from_parts_unchecked(offset, (0..len.max(1) as i64).map(|k| self.get(offset + k)).collect())
    }

    /// Clip onto the symmetric range `[-halfwidth, halfwidth]`.
    pub fn clip_centered(&self, halfwidth: usize) -> Self {
        self.clip_to(-(halfwidth as i64), 2 * halfwidth + 1)
    }

    /// True when all nonzero entries lie in `[offset, offset + len)`.
    pub fn supported_in(&self, offset: i64, len: usize) -> bool {
        let end = offset + len as i64;
        self.sites()
            .zip(&self.values)
            .all(|(i, &v)| v == 0.0 || (i >= offset && i < end))
    }

    fn union_range(&self, other: &Self) -> (i64, usize) {
        let lo = self.offset.min(other.offset);
        let hi = self.end().max(other.end());
        (lo, (hi - lo) as usize)
    }
}

impl PartialEq for LatticeWindow {
    /// Site-by-site comparison after zero-extension.
    fn eq(&self, other: &Self) -> bool {
        let (lo, len) = self.union_range(other);
        (lo..lo + len as i64).all(|i| self.get(i) == other.get(i))
    }
}

/// `Σ_i u_i v_i` over the common support, summed in increasing site order.
pub fn inner_product(u: &LatticeWindow, v: &LatticeWindow) -> Result<f64, LatticeError> {
    let lo = u.offset.max(v.offset);
    let hi = u.end().min(v.end());
    let mut acc = 0.0;
    for i in lo..hi {
        acc += u.get(i) * v.get(i);
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(LatticeError::Overflow)
    }
}

/// `ℓ₂` norm.
pub fn norm(u: &LatticeWindow) -> Result<f64, LatticeError> {
    inner_product(u, u).map(math::sqrt)
}

/// `ℓ₂` norm of a raw slice; same summation order as [`norm`].
pub fn slice_norm(values: &[f64]) -> f64 {
    math::sqrt(values.iter().map(|v| v * v).sum())
}

/// `ℓ₂` distance of two equal-length slices.
pub fn slice_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn stencil(u: &LatticeWindow, f: impl Fn(f64, f64, f64) -> f64) -> LatticeWindow {
    let offset = u.offset - 1;
    let values = (offset..u.end() + 1)
        .map(|i| f(u.get(i - 1), u.get(i), u.get(i + 1)))
        .collect();
    LatticeWindow::from_parts_unchecked(offset, values)
}

/// Discrete Laplacian `(Λu)_i = u_{i-1} - 2u_i + u_{i+1}`, widened by one site.
pub fn laplacian(u: &LatticeWindow) -> LatticeWindow {
    stencil(u, |l, c, r| l - 2.0 * c + r)
}

/// Forward difference `(D⁺u)_i = u_{i+1} - u_i`, widened by one site.
pub fn dplus(u: &LatticeWindow) -> LatticeWindow {
    stencil(u, |_, c, r| r - c)
}

/// `(D⁻u)_i = u_{i-1} - u_i`, widened by one site.
pub fn dminus(u: &LatticeWindow) -> LatticeWindow {
    stencil(u, |l, c, _| l - c)
}

/// `a·u + v` over the union of both supports.
pub fn axpy(a: f64, u: &LatticeWindow, v: &LatticeWindow) -> LatticeWindow {
    let (lo, len) = u.union_range(v);
    let values = (lo..lo + len as i64).map(|i| a * u.get(i) + v.get(i)).collect();
    LatticeWindow::from_parts_unchecked(lo, values)
}

/// `a·u` on the same window.
pub fn scale(a: f64, u: &LatticeWindow) -> LatticeWindow {
    LatticeWindow::from_parts_unchecked(u.offset, u.values.iter().map(|v| a * v).collect())
}

/// `u - v` over the union of both supports.
pub fn difference(u: &LatticeWindow, v: &LatticeWindow) -> LatticeWindow {
    axpy(-1.0, v, u)
}

/// Clipped Laplacian on a fixed window: sites outside `u` are zero and the
/// result is written on the same sites.
pub(crate) fn laplacian_clipped(u: &[f64], out: &mut [f64]) {
    let n = u.len();
    debug_assert_eq!(n, out.len());
    for k in 0..n {
        let left = if k > 0 { u[k - 1] } else { 0.0 };
        let right = if k + 1 < n { u[k + 1] } else { 0.0 };
        out[k] = left - 2.0 * u[k] + right;
    }
}
