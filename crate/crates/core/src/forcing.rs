//! Almost periodic `ℓ₂`-valued forcing.
//!
//! The model family is `f_i(t) = a_i sin(ω_i (t + h))` with a global phase
//! `h` realising the time shift `f^h(t) = f(t + h)`. Only sites with
//! `|i| ≤ active_halfwidth` are evaluated; the mass of the dropped sites is
//! certified by [`ForcingModel::tail_bound`].
//!
//! Elements of the hull of `f` are represented by their time shifts only.

use alloc::vec::Vec;

use crate::lattice::LatticeWindow;
use crate::math;

/// Guard on the search in [`choose_window`].
const MAX_WINDOW_SEARCH: usize = 100_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForcingError {
    #[error("frequency at site {site} must be finite and nonzero, got {omega}")]
    BadFrequency { site: i64, omega: f64 },
    #[error("amplitude at site {site} must be finite, got {amp}")]
    BadAmplitude { site: i64, amp: f64 },
    #[error("site {0} listed twice")]
    DuplicateSite(i64),
    #[error("no frequency given for active site {0}")]
    MissingFrequency(i64),
    #[error("phase must be finite")]
    BadPhase,
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("no window with tail below epsilon²/8 within {0} sites")]
    WindowSearchExhausted(usize),
}

/// Almost periodic forcing `t ↦ g(t) ∈ ℓ₂` together with the bounds used by
/// the dissipativity and tail estimates.
pub trait ForcingModel: Clone + Send + Sync {
    /// Writes `g(t)_i` for the sites `offset .. offset + out.len()`.
    fn eval_into(&self, t: f64, offset: i64, out: &mut [f64]);

    /// Time shift `g^h(t) = g(t + h)`.
    fn shift(&self, h: f64) -> Self;

    /// Certified bound `M ≥ sup_t ‖g(t)‖`, valid for every shift.
    fn sup_norm(&self) -> f64;

    /// Certified bound on `sup_t Σ_{|i|>n} |g_i(t)|²`.
    fn tail_bound(&self, n: usize) -> f64;

    /// `g(t)` on the sites `[offset, offset + len)`.
    fn eval(&self, t: f64, offset: i64, len: usize) -> LatticeWindow {
        let mut values = alloc::vec![0.0; len.max(1)];
        self.eval_into(t, offset, &mut values);
        LatticeWindow::from_parts_unchecked(offset, values)
    }
}

/// How amplitudes are assigned to sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum AmplitudeRule {
    /// `a_i = 2^{-|i|}` on every site of ℤ.
    Dyadic,
    /// Amplitudes listed per site; unlisted sites carry none.
    Explicit,
}

/// Frequencies `ω_i = base + step·|i|`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct FrequencyRule {
    pub base: f64,
    pub step: f64,
}

impl FrequencyRule {
    pub fn omega(&self, site: i64) -> f64 {
        self.base + self.step * site.unsigned_abs() as f64
    }
}

/// One forcing term `amp · sin(omega · t)` at lattice site `site`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingTerm {
    pub site: i64,
    pub omega: f64,
    pub amp: f64,
}

/// Quasi-periodic forcing with per-site frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiPeriodicForcing {
    rule: AmplitudeRule,
    /// Active terms, sorted by site.
    terms: Vec<ForcingTerm>,
    /// Every listed term, including those outside the active window.
    listed: Vec<ForcingTerm>,
    active_halfwidth: usize,
    phase: f64,
}

/// `a_i = 2^{-|i|}`.
pub fn dyadic_amplitude(site: i64) -> f64 {
    math::powi(0.5, site.unsigned_abs().min(2000) as i32)
}

/// `Σ_{|i|>n} 4^{-|i|} = (2/3)·4^{-n}`.
pub fn dyadic_tail(n: usize) -> f64 {
    2.0 / 3.0 * math::powi(0.25, n.min(2000) as i32)
}

/// `Σ_{i∈ℤ} 4^{-|i|} = 5/3`.
pub const DYADIC_TOTAL_MASS: f64 = 5.0 / 3.0;

impl QuasiPeriodicForcing {
    /// Dyadic amplitudes with frequencies from `omega` on `|i| ≤ active_halfwidth`.
    pub fn dyadic(active_halfwidth: usize, omega: impl Fn(i64) -> f64) -> Result<Self, ForcingError> {
        let n = active_halfwidth as i64;
        let terms = (-n..=n)
            .map(|i| ForcingTerm {
                site: i,
                omega: omega(i),
                amp: dyadic_amplitude(i),
            })
            .collect();
        Self::build(AmplitudeRule::Dyadic, terms, active_halfwidth, 0.0)
    }

    /// Explicitly listed terms; those beyond `active_halfwidth` are dropped
    /// from evaluation but still counted in the tail and sup-norm bounds.
    pub fn explicit(terms: Vec<ForcingTerm>, active_halfwidth: usize) -> Result<Self, ForcingError> {
        Self::build(AmplitudeRule::Explicit, terms, active_halfwidth, 0.0)
    }

    /// General constructor used by configuration loaders.
    ///
    /// For the dyadic rule, listed amplitudes are ignored and each active
    /// site takes its frequency from the listed term if present, else from
    /// `omega_rule`. For the explicit rule, terms are used as given.
    pub fn from_parts(
        rule: AmplitudeRule,
        sites: &[ForcingTerm],
        omega_rule: Option<FrequencyRule>,
        active_halfwidth: usize,
        phase: f64,
    ) -> Result<Self, ForcingError> {
        let terms = match rule {
            AmplitudeRule::Explicit => sites.to_vec(),
            AmplitudeRule::Dyadic => {
                let n = active_halfwidth as i64;
                let mut terms = Vec::with_capacity(2 * active_halfwidth + 1);
                for i in -n..=n {
                    let omega = match sites.iter().find(|s| s.site == i) {
                        Some(s) => s.omega,
                        None => omega_rule.ok_or(ForcingError::MissingFrequency(i))?.omega(i),
                    };
                    terms.push(ForcingTerm {
                        site: i,
                        omega,
                        amp: dyadic_amplitude(i),
                    });
                }
                terms
            }
        };
        Self::build(rule, terms, active_halfwidth, phase)
    }

    fn build(
        rule: AmplitudeRule,
        mut terms: Vec<ForcingTerm>,
        active_halfwidth: usize,
        phase: f64,
    ) -> Result<Self, ForcingError> {
        if !phase.is_finite() {
            return Err(ForcingError::BadPhase);
        }
        terms.sort_by_key(|t| t.site);
        for pair in terms.windows(2) {
            if pair[0].site == pair[1].site {
                return Err(ForcingError::DuplicateSite(pair[0].site));
            }
        }
        for t in &terms {
            if !(t.omega.is_finite() && t.omega != 0.0) {
                return Err(ForcingError::BadFrequency { site: t.site, omega: t.omega });
            }
            if !t.amp.is_finite() {
                return Err(ForcingError::BadAmplitude { site: t.site, amp: t.amp });
            }
        }
        let listed = terms.clone();
        terms.retain(|t| t.site.unsigned_abs() as usize <= active_halfwidth);
        Ok(Self {
            rule,
            terms,
            listed,
            active_halfwidth,
            phase,
        })
    }

    pub fn rule(&self) -> AmplitudeRule {
        self.rule
    }

    pub fn terms(&self) -> &[ForcingTerm] {
        &self.terms
    }

    pub fn active_halfwidth(&self) -> usize {
        self.active_halfwidth
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// True when no active term has a nonzero amplitude.
    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.amp == 0.0)
    }
}

impl ForcingModel for QuasiPeriodicForcing {
    fn eval_into(&self, t: f64, offset: i64, out: &mut [f64]) {
        out.fill(0.0);
        let end = offset + out.len() as i64;
        let time = t + self.phase;
        for term in &self.terms {
            if term.site >= offset && term.site < end {
                out[(term.site - offset) as usize] = term.amp * math::sin(term.omega * time);
            }
        }
    }

    fn shift(&self, h: f64) -> Self {
        Self {
            phase: self.phase + h,
            ..self.clone()
        }
    }

    fn sup_norm(&self) -> f64 {
        match self.rule {
            AmplitudeRule::Dyadic => math::sqrt(DYADIC_TOTAL_MASS),
            AmplitudeRule::Explicit => math::sqrt(self.listed.iter().map(|t| t.amp * t.amp).sum()),
        }
    }

    fn tail_bound(&self, n: usize) -> f64 {
        match self.rule {
            AmplitudeRule::Dyadic => dyadic_tail(n),
            AmplitudeRule::Explicit => self
                .listed
                .iter()
                .filter(|t| t.site.unsigned_abs() as usize > n)
                .map(|t| t.amp * t.amp)
                .sum(),
        }
    }
}

/// Smallest `n` with `tail_bound(n) < ε²/8`.
pub fn choose_window<G: ForcingModel>(model: &G, epsilon: f64) -> Result<usize, ForcingError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ForcingError::BadEpsilon(epsilon));
    }
    let target = epsilon * epsilon / 8.0;
    (0..MAX_WINDOW_SEARCH)
        .find(|&n| model.tail_bound(n) < target)
        .ok_or(ForcingError::WindowSearchExhausted(MAX_WINDOW_SEARCH))
}

/// Per-site tolerance `ε / √(2(2n+1))`: a common translation number of the
/// `2n+1` central components at this tolerance translates the whole forcing
/// within `ε`, provided the tail beyond `n` is below `ε²/8`.
pub fn translation_number_bound(n: usize, epsilon: f64) -> f64 {
    epsilon / math::sqrt(2.0 * (2 * n + 1) as f64)
}
