//! The GNM transition: Gauss-Newton proposals with back-off.
//!
//! A transition proposes from the Gauss-Newton kernel at the current point.
//! On rejection the kernel is dilated toward the current point and a new
//! proposal is drawn, up to `max_steps` times. Acceptance at stage `k` uses
//! the recursive formula that balances the whole trajectory
//! `x → z₁ → … → z_k` against its reverse `z_k → z₁ → … → x`:
//!
//! ```text
//! A(x, z_k | z₁..z_{k−1}) = min{1, p(z_k) Πᵢ K̃ᵢ(z_k, zᵢ)[1 − Ã(z_k, zᵢ | z_<i)] K̃_k(z_k, x)
//!                                 / p(x) Πᵢ Kᵢ(x, zᵢ)[1 − A(x, zᵢ | z_<i)] K_k(x, z_k)}
//! ```
//!
//! Reverse kernels are rebuilt from cached point states with the same
//! dilation rule as the forward pass, so no extra model calls are made.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::PrecisionGaussian;
use crate::model::{Model, ModelHandle};
use crate::posterior::{GaussianPrior, PointState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackoffMode {
    None,
    Static,
    Dynamic,
}

impl BackoffMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BackoffMode::None => "none",
            BackoffMode::Static => "static",
            BackoffMode::Dynamic => "dynamic",
        }
    }
}

/// Back-off configuration.
///
/// In static mode `factor` is the per-stage dilation. In dynamic mode the
/// dilation comes from a cubic line search clamped to `[t_lo, t_hi]`, and
/// `factor` is the fallback used when the search has no interior minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub mode: BackoffMode,
    pub max_steps: usize,
    pub factor: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self::none()
    }
}

impl BackoffPolicy {
    pub const DEFAULT_T_LO: f64 = 0.05;
    pub const DEFAULT_T_HI: f64 = 0.95;

    pub fn none() -> Self {
        Self {
            mode: BackoffMode::None,
            max_steps: 0,
            factor: 0.5 * (Self::DEFAULT_T_LO + Self::DEFAULT_T_HI),
            t_lo: Self::DEFAULT_T_LO,
            t_hi: Self::DEFAULT_T_HI,
        }
    }

    /// Fixed dilation `factor` per back-off stage. Zero steps means no
    /// back-off, whatever the factor.
    pub fn fixed(max_steps: usize, factor: f64) -> Result<Self> {
        if max_steps == 0 {
            return Ok(Self::none());
        }
        let p = Self {
            mode: BackoffMode::Static,
            max_steps,
            factor,
            ..Self::none()
        };
        p.validate()?;
        Ok(p)
    }

    /// Line-search dilation with the default clamp `[0.05, 0.95]` and
    /// fallback `0.5`.
    pub fn dynamic(max_steps: usize) -> Result<Self> {
        Self::dynamic_with(
            max_steps,
            0.5 * (Self::DEFAULT_T_LO + Self::DEFAULT_T_HI),
            Self::DEFAULT_T_LO,
            Self::DEFAULT_T_HI,
        )
    }

    pub fn dynamic_with(max_steps: usize, fallback: f64, t_lo: f64, t_hi: f64) -> Result<Self> {
        let p = Self {
            mode: if max_steps == 0 { BackoffMode::None } else { BackoffMode::Dynamic },
            max_steps,
            factor: fallback,
            t_lo,
            t_hi,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.mode == BackoffMode::None) != (self.max_steps == 0) {
            return Err(Error::InvalidPolicy("mode none must coincide with zero back-off steps"));
        }
        if !(self.t_lo > 0.0 && self.t_lo < self.t_hi && self.t_hi < 1.0) {
            return Err(Error::InvalidPolicy("clamp bounds must satisfy 0 < t_lo < t_hi < 1"));
        }
        match self.mode {
            BackoffMode::Static if !(self.factor > 0.0 && self.factor < 1.0) => {
                Err(Error::InvalidPolicy("static dilation factor must lie in (0, 1)"))
            }
            BackoffMode::Dynamic if !(self.factor > 0.0 && self.factor < 1.0) => {
                Err(Error::InvalidPolicy("dynamic fallback must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Total number of proposal stages per transition.
    pub fn stages(&self) -> usize {
        self.max_steps + 1
    }
}

/// Endpoint values and slopes of `φ(t)` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicData {
    pub phi0: f64,
    pub phi1: f64,
    pub dphi0: f64,
    pub dphi1: f64,
}

impl CubicData {
    /// The cubic Hermite interpolant matching the four values.
    pub fn interpolant(&self, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        self.phi0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + self.dphi0 * (t3 - 2.0 * t2 + t)
            + self.phi1 * (-2.0 * t3 + 3.0 * t2)
            + self.dphi1 * (t3 - t2)
    }
}

/// Interior local minimizer of the cubic interpolant on `(0, 1)`, or `None`
/// when the cubic has no minimum strictly inside the interval.
pub fn cubic_minimizer(c: &CubicData) -> Option<f64> {
    let d1 = c.dphi0 + c.dphi1 - 3.0 * (c.phi1 - c.phi0);
    let disc = d1 * d1 - c.dphi0 * c.dphi1;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = libm::sqrt(disc);
    let denom = c.dphi1 - c.dphi0 + 2.0 * d2;
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    let t = 1.0 - (c.dphi1 + d2 - d1) / denom;
    (t > 0.0 && t < 1.0).then_some(t)
}

/// Dilation from a cubic line search of `φ(t) = ‖f(x + t(z − x))‖²`,
/// using only the cached evaluations at `x` and `z`.
pub fn dynamic_gamma(x: &PointState, z: &PointState, policy: &BackoffPolicy) -> f64 {
    let fallback = policy.factor;
    if !x.inside() || !z.inside() {
        return fallback;
    }
    let dir = &z.x - &x.x;
    let slope = |s: &PointState| 2.0 * s.eval.residual.dot(&(&s.eval.jacobian * &dir));
    let data = CubicData {
        phi0: x.eval.residual_norm_sq(),
        phi1: z.eval.residual_norm_sq(),
        dphi0: slope(x),
        dphi1: slope(z),
    };
    if [data.phi0, data.phi1, data.dphi0, data.dphi1].iter().any(|v| !v.is_finite()) {
        return fallback;
    }
    match cubic_minimizer(&data) {
        Some(t) => t.clamp(policy.t_lo, policy.t_hi),
        None => fallback,
    }
}

/// Kernel for the stage following `rejected` from `origin`, with its
/// cumulative dilation relative to the undilated proposal.
///
/// Static mode dilates by `factor^(i−1)` at stage `i`. Dynamic mode
/// multiplies the line-search factors toward each rejected point in turn.
pub fn stage_kernel(
    policy: &BackoffPolicy,
    origin: &PointState,
    rejected: &[&PointState],
) -> Result<(PrecisionGaussian, f64)> {
    let base = origin.proposal()?;
    if rejected.is_empty() {
        return Ok((base.clone(), 1.0));
    }
    let gamma = match policy.mode {
        BackoffMode::None => return Err(Error::InvalidPolicy("no back-off stages configured")),
        BackoffMode::Static => libm::pow(policy.factor, rejected.len() as f64),
        BackoffMode::Dynamic => rejected
            .iter()
            .map(|z| dynamic_gamma(origin, z, policy))
            .product(),
    };
    Ok((base.dilate(&origin.x, gamma)?, gamma))
}

/// Running counters for conditions that do not abort a transition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    /// Acceptance computations that hit a singular reverse proposal and were
    /// treated as rejections.
    pub singular_proposals: u64,
}

/// `log(1 − eᵃ)` for `a ≤ 0`.
fn ln_1m_exp(a: f64) -> f64 {
    if a >= 0.0 {
        f64::NEG_INFINITY
    } else if a > -core::f64::consts::LN_2 {
        libm::log(-libm::expm1(a))
    } else {
        libm::log1p(-libm::exp(a))
    }
}

/// `log[p(start) Πᵢ Kᵢ(start, sᵢ)(1 − A(start, sᵢ | s_<i)) K_k(start, end)]`.
///
/// `None` when a kernel at `start` cannot be built.
fn path_log_weight(
    policy: &BackoffPolicy,
    start: &PointState,
    between: &[&PointState],
    end: &PointState,
    stats: &mut KernelStats,
) -> Option<f64> {
    let mut total = start.log_post;
    for i in 0..=between.len() {
        let (kernel, _) = stage_kernel(policy, start, &between[..i]).ok()?;
        let target = if i < between.len() { between[i] } else { end };
        total += kernel.log_pdf_unchecked(&target.x);
        if i < between.len() {
            total += ln_1m_exp(log_accept(policy, start, &between[..i], between[i], stats));
        }
        if total == f64::NEG_INFINITY {
            return Some(total);
        }
    }
    Some(total)
}

/// Log acceptance probability of `end` from `start` after the rejected
/// proposals `between`. Always in `[−∞, 0]`.
pub fn log_accept(
    policy: &BackoffPolicy,
    start: &PointState,
    between: &[&PointState],
    end: &PointState,
    stats: &mut KernelStats,
) -> f64 {
    if end.log_post == f64::NEG_INFINITY || !start.inside() {
        return f64::NEG_INFINITY;
    }
    let Some(num) = path_log_weight(policy, end, between, start, stats) else {
        stats.singular_proposals += 1;
        return f64::NEG_INFINITY;
    };
    if num == f64::NEG_INFINITY {
        return num;
    }
    let Some(den) = path_log_weight(policy, start, between, end, stats) else {
        stats.singular_proposals += 1;
        return f64::NEG_INFINITY;
    };
    if den == f64::NEG_INFINITY {
        return 0.0;
    }
    let r = (num - den).min(0.0);
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r
    }
}

/// One proposal stage of a transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub kernel: PrecisionGaussian,
    pub point: PointState,
    /// Cumulative dilation relative to the first stage.
    pub gamma: f64,
}

/// The proposals made during one transition from `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffTrajectory<'a> {
    pub origin: &'a PointState,
    pub stages: Vec<Stage>,
}

impl<'a> BackoffTrajectory<'a> {
    pub fn new(origin: &'a PointState) -> Self {
        Self {
            origin,
            stages: Vec::new(),
        }
    }

    /// Acceptance probability of the last stage given the earlier ones.
    pub fn accept_prob(&self, policy: &BackoffPolicy, stats: &mut KernelStats) -> f64 {
        let Some((last, earlier)) = self.stages.split_last() else {
            return 0.0;
        };
        let rejected: Vec<&PointState> = earlier.iter().map(|s| &s.point).collect();
        libm::exp(log_accept(policy, self.origin, &rejected, &last.point, stats))
    }
}

/// Outcome of a transition: the accepted point and its stage (`1..=max_steps+1`),
/// or no point and stage `−1` when every stage rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: Option<PointState>,
    pub accepted_at: i32,
}

/// Performs one GNM transition from `current`.
///
/// Per stage the generator yields `n` standard normals for the proposal and
/// then one uniform for the accept test.
pub fn step<M: Model, R: Rng + ?Sized>(
    current: &PointState,
    policy: &BackoffPolicy,
    prior: &GaussianPrior,
    model: &mut ModelHandle<M>,
    rng: &mut R,
    stats: &mut KernelStats,
) -> Result<Transition> {
    let n = current.x.len();
    let mut stages: Vec<Stage> = Vec::with_capacity(policy.stages());
    for stage in 1..=policy.stages() {
        let rejected: Vec<&PointState> = stages.iter().map(|s| &s.point).collect();
        let (kernel, gamma) = stage_kernel(policy, current, &rejected)?;
        let normals = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let z = kernel.sample(&normals)?;
        let eval = model.evaluate(&z)?;
        let point = PointState::new(prior, z, eval);
        let la = log_accept(policy, current, &rejected, &point, stats);
        let u: f64 = rng.random();
        if u < libm::exp(la) {
            return Ok(Transition {
                next: Some(point),
                accepted_at: stage as i32,
            });
        }
        stages.push(Stage { kernel, point, gamma });
    }
    Ok(Transition {
        next: None,
        accepted_at: -1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExpSeries, ExpSeriesArgs, Linear, ModelEval, Quickstart, default_times};
    use alloc::vec;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn state<M: Model>(model: &M, prior: &GaussianPrior, x: DVector<f64>) -> PointState {
        let e = model.evaluate(&x).unwrap();
        PointState::new(prior, x, e)
    }

    fn quickstart_prior() -> GaussianPrior {
        GaussianPrior::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn cubic_examples() {
        let endpoint = CubicData { phi0: 1.0, phi1: 0.0, dphi0: -2.0, dphi1: 0.0 };
        assert_eq!(cubic_minimizer(&endpoint), None);
        let sym = CubicData { phi0: 0.25, phi1: 0.25, dphi0: -1.0, dphi1: 1.0 };
        assert!((cubic_minimizer(&sym).unwrap() - 0.5).abs() < 1e-15);
        let boundary = CubicData { phi0: 0.0, phi1: 0.0, dphi0: 1.0, dphi1: 0.0 };
        assert_eq!(cubic_minimizer(&boundary), None);
        let no_real = CubicData { phi0: 0.0, phi1: 2.0, dphi0: 3.0, dphi1: 3.0 };
        assert_eq!(cubic_minimizer(&no_real), None);
    }

    #[test]
    fn cubic_result_is_local_minimum() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut found = 0;
        for _ in 0..2000 {
            let c = CubicData {
                phi0: rng.random_range(-2.0..2.0),
                phi1: rng.random_range(-2.0..2.0),
                dphi0: rng.random_range(-5.0..5.0),
                dphi1: rng.random_range(-5.0..5.0),
            };
            if let Some(t) = cubic_minimizer(&c) {
                found += 1;
                let v = c.interpolant(t);
                if t > 1e-3 && t < 1.0 - 1e-3 {
                    assert!(v <= c.interpolant(t - 1e-3) + 1e-12);
                    assert!(v <= c.interpolant(t + 1e-3) + 1e-12);
                }
            }
        }
        assert!(found > 100);
    }

    #[test]
    fn dynamic_gamma_symmetric_well() {
        let model = |x: &DVector<f64>| Ok(ModelEval::new(x.clone(), DMatrix::identity(1, 1)));
        let prior = GaussianPrior::flat(DVector::zeros(1));
        let x = state(&model, &prior, DVector::from_element(1, -1.0));
        let z = state(&model, &prior, DVector::from_element(1, 1.0));
        let policy = BackoffPolicy::dynamic(1).unwrap();
        assert!((dynamic_gamma(&x, &z, &policy) - 0.5).abs() < 1e-15);
        let out = PointState::new(&prior, DVector::from_element(1, 3.0), ModelEval::outside());
        assert_eq!(dynamic_gamma(&x, &out, &policy), policy.factor);
    }

    #[test]
    fn dynamic_gamma_linear_matches_exact_minimizer() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.5, 1.5, 0.3, 0.3]);
        let b = DVector::from_vec(vec![0.1, 0.4, -0.2]);
        let model = Linear::new(a.clone(), b.clone()).unwrap();
        let prior = GaussianPrior::flat(DVector::zeros(2));
        let policy = BackoffPolicy::dynamic(2).unwrap();
        let mut checked = 0;
        while checked < 50 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let z = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            // φ(t) = ‖r + t q‖², minimizer −(r·q)/(q·q)
            let r = &a * &x - &b;
            let q = &a * (&z - &x);
            let exact = -r.dot(&q) / q.dot(&q);
            if !(exact > 1e-6 && exact < 1.0 - 1e-6) {
                continue;
            }
            let g = dynamic_gamma(&state(&model, &prior, x), &state(&model, &prior, z), &policy);
            assert!((g - exact.clamp(policy.t_lo, policy.t_hi)).abs() < 1e-10);
            checked += 1;
        }
    }

    #[test]
    fn policy_validation() {
        assert_eq!(BackoffPolicy::fixed(0, 7.0).unwrap().mode, BackoffMode::None);
        assert!(BackoffPolicy::fixed(2, 1.5).is_err());
        assert!(BackoffPolicy::fixed(2, 0.0).is_err());
        let p = BackoffPolicy::fixed(5, 0.2).unwrap();
        assert_eq!((p.mode, p.max_steps, p.stages()), (BackoffMode::Static, 5, 6));
        let d = BackoffPolicy::dynamic(3).unwrap();
        assert_eq!((d.mode, d.t_lo, d.t_hi, d.factor), (BackoffMode::Dynamic, 0.05, 0.95, 0.5));
        assert!(BackoffPolicy::dynamic_with(1, 0.5, 0.6, 0.4).is_err());
        let bad = BackoffPolicy { max_steps: 2, ..BackoffPolicy::none() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn static_stage_scales() {
        let prior = quickstart_prior();
        let q = Quickstart::default();
        let x = state(&q, &prior, DVector::from_element(1, 0.8));
        let z1 = state(&q, &prior, DVector::from_element(1, 2.0));
        let z2 = state(&q, &prior, DVector::from_element(1, -1.5));
        let policy = BackoffPolicy::fixed(3, 0.3).unwrap();
        let base = x.proposal().unwrap();
        for (i, rej) in [vec![], vec![&z1], vec![&z1, &z2]].iter().enumerate() {
            let (k, g) = stage_kernel(&policy, &x, rej).unwrap();
            let expected = base.dilate(&x.x, libm::pow(0.3, i as f64)).unwrap();
            assert_eq!(g, libm::pow(0.3, i as f64));
            if i > 0 {
                assert_eq!(k, expected);
            } else {
                assert_eq!(&k, base);
            }
        }
    }

    #[test]
    fn single_stage_balance_and_bounds() {
        let prior = quickstart_prior();
        let q = Quickstart { y: 2.0, sigma: 0.4 };
        let policy = BackoffPolicy::none();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut stats = KernelStats::default();
        for _ in 0..200 {
            let x = state(&q, &prior, DVector::from_element(1, rng.random_range(-3.0..3.0)));
            let z = state(&q, &prior, DVector::from_element(1, rng.random_range(-3.0..3.0)));
            let a_xz = log_accept(&policy, &x, &[], &z, &mut stats);
            let a_zx = log_accept(&policy, &z, &[], &x, &mut stats);
            assert!(a_xz <= 0.0 && a_zx <= 0.0);
            let kxz = x.proposal().unwrap().log_pdf(&z.x).unwrap();
            let kzx = z.proposal().unwrap().log_pdf(&x.x).unwrap();
            let lhs = x.log_post + kxz + a_xz;
            let rhs = z.log_post + kzx + a_zx;
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            assert_eq!(log_accept(&policy, &x, &[], &x, &mut stats), 0.0);
        }
        assert_eq!(stats.singular_proposals, 0);
    }

    #[test]
    fn outside_candidate_has_zero_acceptance() {
        let prior = quickstart_prior();
        let q = Quickstart::default();
        let x = state(&q, &prior, DVector::from_element(1, 0.5));
        let out = PointState::new(&prior, DVector::from_element(1, 1.0), ModelEval::outside());
        let mut stats = KernelStats::default();
        let policy = BackoffPolicy::fixed(2, 0.5).unwrap();
        assert_eq!(log_accept(&policy, &x, &[], &out, &mut stats), f64::NEG_INFINITY);
        // an outside intermediate contributes 1 − A = 1
        let z2 = state(&q, &prior, DVector::from_element(1, 0.7));
        let la = log_accept(&policy, &x, &[&out], &z2, &mut stats);
        assert!(la <= 0.0 && la > f64::NEG_INFINITY);
    }

    #[test]
    fn singular_candidate_counts_warning() {
        let flat = GaussianPrior::flat(DVector::zeros(1));
        let q = Quickstart::default();
        let x = state(&q, &flat, DVector::from_element(1, 0.9));
        let z = state(&q, &flat, DVector::from_element(1, 0.0));
        let mut stats = KernelStats::default();
        assert_eq!(log_accept(&BackoffPolicy::none(), &x, &[], &z, &mut stats), f64::NEG_INFINITY);
        assert_eq!(stats.singular_proposals, 1);
    }

    #[test]
    fn linear_model_always_accepts_first_stage() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.0, 1.0]);
        let mut model = ModelHandle::new(Linear::new(a, DVector::from_vec(vec![1.0, -1.0])).unwrap(), 2);
        let prior = GaussianPrior::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut stats = KernelStats::default();
        let x0 = DVector::from_vec(vec![3.0, 3.0]);
        let e = model.evaluate(&x0).unwrap();
        let mut cur = PointState::new(&prior, x0, e);
        for policy in [BackoffPolicy::none(), BackoffPolicy::fixed(2, 0.2).unwrap(), BackoffPolicy::dynamic(2).unwrap()] {
            for _ in 0..200 {
                let t = step(&cur, &policy, &prior, &mut model, &mut rng, &mut stats).unwrap();
                assert_eq!(t.accepted_at, 1);
                cur = t.next.unwrap();
            }
        }
    }

    #[test]
    fn plain_rejection_returns_minus_one() {
        // A proposal far from the target with no back-off: u > A forces a reject.
        let prior = GaussianPrior::flat(DVector::zeros(1));
        let q = Quickstart { y: 9.0, sigma: 0.05 };
        let mut model = ModelHandle::new(q, 1);
        let x0 = DVector::from_element(1, 0.05);
        let e = model.evaluate(&x0).unwrap();
        let cur = PointState::new(&prior, x0, e);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut stats = KernelStats::default();
        let mut rejected = 0;
        for _ in 0..50 {
            let t = step(&cur, &BackoffPolicy::none(), &prior, &mut model, &mut rng, &mut stats).unwrap();
            assert!(t.accepted_at == 1 || t.accepted_at == -1);
            if t.accepted_at == -1 {
                assert!(t.next.is_none());
                rejected += 1;
            }
        }
        assert!(rejected > 0);
        assert_eq!(model.call_count(), 51);
    }

    #[test]
    fn two_stage_flow_symmetry_exp_series() {
        let args = ExpSeriesArgs::synthetic(&[1.0, 2.5, 0.5, 3.1], default_times(10), 0.1, 1).unwrap();
        let model = ExpSeries::new(args);
        let prior = GaussianPrior::new(DVector::from_vec(vec![4.0, 2.0, 0.5, 1.0]), DMatrix::identity(4, 4) * 0.5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let center = DVector::from_vec(vec![1.0, 2.5, 0.5, 3.1]);
        for policy in [BackoffPolicy::fixed(1, 0.1).unwrap(), BackoffPolicy::dynamic(1).unwrap()] {
            let mut stats = KernelStats::default();
            let mut nontrivial = 0;
            for _ in 0..20 {
                // z1 sits further out so that it is usually rejected from both ends.
                let mut pick = |w: f64| {
                    let x = &center + DVector::from_fn(4, |_, _| rng.random_range(-w..w));
                    state(&model, &prior, x)
                };
                let (x, z1, z2) = (pick(0.2), pick(0.8), pick(0.2));
                let phi = |a: &PointState, b: &PointState, stats: &mut KernelStats| {
                    let (k1, _) = stage_kernel(&policy, a, &[]).unwrap();
                    let (k2, _) = stage_kernel(&policy, a, &[&z1]).unwrap();
                    a.log_post
                        + k1.log_pdf(&z1.x).unwrap()
                        + ln_1m_exp(log_accept(&policy, a, &[], &z1, stats))
                        + k2.log_pdf(&b.x).unwrap()
                        + log_accept(&policy, a, &[&z1], b, stats)
                };
                let fwd = phi(&x, &z2, &mut stats);
                let rev = phi(&z2, &x, &mut stats);
                if fwd == f64::NEG_INFINITY && rev == f64::NEG_INFINITY {
                    continue;
                }
                nontrivial += 1;
                assert!((fwd - rev).abs() <= 1e-10 * fwd.abs().max(1.0), "{fwd} vs {rev}");
            }
            assert!(nontrivial >= 5, "{nontrivial}");
        }
    }

    #[test]
    fn ln_1m_exp_is_stable() {
        assert_eq!(ln_1m_exp(0.0), f64::NEG_INFINITY);
        assert!((ln_1m_exp(-1e-20) - libm::log(1e-20)).abs() < 1e-6);
        assert!((ln_1m_exp(-50.0) + libm::exp(-50.0)).abs() < 1e-30);
        assert_eq!(ln_1m_exp(f64::NEG_INFINITY), 0.0);
    }
}
