//! Chain orchestration: initialization, configuration, sampling, burn-in and
//! the run counters.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::kernel::{self, BackoffPolicy, KernelStats};
use crate::model::{Model, ModelHandle};
use crate::posterior::{GaussianPrior, PointState};

/// Identifier stored alongside serialized generator state.
pub const RNG_ALGORITHM: &str = "chacha20";

/// Serializable generator state: the 256-bit seed as four little-endian
/// words, the stream id, and the 128-bit word position as (low, high).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub algorithm_id: String,
    pub state: Vec<u64>,
}

impl RngState {
    pub fn capture(rng: &ChaCha20Rng) -> Self {
        let seed = rng.get_seed();
        let mut state = Vec::with_capacity(7);
        for chunk in seed.chunks_exact(8) {
            let mut w = [0u8; 8];
            w.copy_from_slice(chunk);
            state.push(u64::from_le_bytes(w));
        }
        state.push(rng.get_stream());
        let pos = rng.get_word_pos();
        state.push(pos as u64);
        state.push((pos >> 64) as u64);
        Self {
            algorithm_id: String::from(RNG_ALGORITHM),
            state,
        }
    }

    pub fn restore(&self) -> Result<ChaCha20Rng> {
        if self.algorithm_id != RNG_ALGORITHM {
            return Err(Error::InvalidArgument("unknown generator algorithm"));
        }
        if self.state.len() != 7 {
            return Err(Error::InvalidArgument("generator state must have 7 words"));
        }
        let mut seed = [0u8; 32];
        for (i, w) in self.state[..4].iter().enumerate() {
            seed[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha20Rng::from_seed(seed);
        rng.set_stream(self.state[4]);
        rng.set_word_pos(u128::from(self.state[5]) | (u128::from(self.state[6]) << 64));
        Ok(rng)
    }
}

/// Everything needed to resume a chain, except the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSnapshot {
    pub dim: usize,
    /// Row-major, `n_samples × dim`.
    pub chain: Vec<f64>,
    pub n_samples: u64,
    pub n_accepted: u64,
    pub call_count: u64,
    pub burned: u64,
    /// `(stage, count)` with stage `−1` for rejections.
    pub step_count: Vec<(i32, u64)>,
    pub policy: BackoffPolicy,
    pub prior_mean: Vec<f64>,
    /// Row-major, `dim × dim`.
    pub prior_precision: Vec<f64>,
    pub current_x: Vec<f64>,
    pub rng: RngState,
}

/// A GNM Markov chain over a user model.
#[derive(Debug, Clone)]
pub struct Sampler<M> {
    model: ModelHandle<M>,
    prior: GaussianPrior,
    policy: BackoffPolicy,
    current: PointState,
    chain: Vec<f64>,
    n_accepted: u64,
    /// Index 0 counts rejections, index `i ≥ 1` acceptances at stage `i`.
    step_count: Vec<u64>,
    burned: u64,
    rng: ChaCha20Rng,
    stats: KernelStats,
}

fn initial_state<M: Model>(model: &mut ModelHandle<M>, prior: &GaussianPrior, x0: DVector<f64>) -> Result<PointState> {
    let eval = model.evaluate(&x0)?;
    if !eval.inside {
        return Err(Error::InitialGuessOutsideDomain);
    }
    let state = PointState::new(prior, x0, eval);
    state.proposal()?;
    Ok(state)
}

impl<M: Model> Sampler<M> {
    /// Evaluates the model at `x0` under a flat prior centred on `x0` with no
    /// back-off.
    pub fn new(x0: DVector<f64>, model: M) -> Result<Self> {
        let prior = GaussianPrior::flat(x0.clone());
        Self::with_prior(x0, model, prior)
    }

    pub fn with_prior(x0: DVector<f64>, model: M, prior: GaussianPrior) -> Result<Self> {
        if prior.dim() != x0.len() {
            return Err(Error::DimensionMismatch {
                what: "prior mean",
                expected: x0.len(),
                found: prior.dim(),
            });
        }
        let mut model = ModelHandle::new(model, x0.len());
        let current = initial_state(&mut model, &prior, x0)?;
        Ok(Self {
            model,
            prior,
            policy: BackoffPolicy::none(),
            current,
            chain: Vec::new(),
            n_accepted: 0,
            step_count: vec![0; 2],
            burned: 0,
            rng: ChaCha20Rng::seed_from_u64(0),
            stats: KernelStats::default(),
        })
    }

    /// Reseeds the generator.
    pub fn seed(&mut self, seed: u64) {
        self.rng = ChaCha20Rng::seed_from_u64(seed);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed(seed);
        self
    }

    pub fn set_prior(&mut self, mean: DVector<f64>, precision: DMatrix<f64>) -> Result<()> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "prior mean",
                expected: self.dim(),
                found: mean.len(),
            });
        }
        let prior = GaussianPrior::new(mean, precision)?;
        let current = PointState::new(&prior, self.current.x.clone(), self.current.eval.clone());
        current.proposal()?;
        self.prior = prior;
        self.current = current;
        Ok(())
    }

    pub fn set_policy(&mut self, policy: BackoffPolicy) -> Result<()> {
        policy.validate()?;
        self.policy = policy;
        if self.step_count.len() < policy.stages() + 1 {
            self.step_count.resize(policy.stages() + 1, 0);
        }
        Ok(())
    }

    /// Static back-off: up to `max_steps` retries, each dilating by `factor`.
    pub fn set_static(&mut self, max_steps: usize, factor: f64) -> Result<()> {
        self.set_policy(BackoffPolicy::fixed(max_steps, factor)?)
    }

    /// Dynamic back-off with the default line-search clamp.
    pub fn set_dynamic(&mut self, max_steps: usize) -> Result<()> {
        self.set_policy(BackoffPolicy::dynamic(max_steps)?)
    }

    /// Appends `n` samples to the chain.
    pub fn run(&mut self, n: usize) -> Result<()> {
        self.chain.reserve(n * self.dim());
        for _ in 0..n {
            self.advance()?;
        }
        Ok(())
    }

    /// Appends `n` samples in `divs` consecutive divisions, calling
    /// `on_division(self, finished, divs)` after each one.
    pub fn run_divided<E, F>(&mut self, n: usize, divs: usize, mut on_division: F) -> core::result::Result<(), E>
    where
        E: From<Error>,
        F: FnMut(&Self, usize, usize) -> core::result::Result<(), E>,
    {
        if n == 0 {
            return Err(Error::InvalidArgument("number of samples must be positive").into());
        }
        if divs == 0 || divs > n {
            return Err(Error::InvalidArgument("divisions must be between 1 and the number of samples").into());
        }
        for d in 0..divs {
            let size = (d + 1) * n / divs - d * n / divs;
            self.run(size)?;
            on_division(self, d + 1, divs)?;
        }
        Ok(())
    }

    fn advance(&mut self) -> Result<()> {
        let outcome = kernel::step(
            &self.current,
            &self.policy,
            &self.prior,
            &mut self.model,
            &mut self.rng,
            &mut self.stats,
        );
        match outcome {
            Ok(t) => match t.next {
                Some(next) => {
                    self.current = next;
                    self.n_accepted += 1;
                    self.step_count[t.accepted_at as usize] += 1;
                }
                None => self.step_count[0] += 1,
            },
            Err(Error::SingularProposal) => {
                self.stats.singular_proposals += 1;
                self.step_count[0] += 1;
            }
            Err(e) => return Err(e),
        }
        self.chain.extend_from_slice(self.current.x.as_slice());
        Ok(())
    }

    /// Discards the first `n` rows. Run counters keep describing the whole
    /// run; `burned` accumulates.
    pub fn burn(&mut self, n: usize) -> Result<()> {
        let available = self.n_samples() as usize;
        if n > available {
            return Err(Error::BurnTooLarge { requested: n, available });
        }
        self.chain.drain(..n * self.dim());
        self.burned += n as u64;
        Ok(())
    }

    /// Unnormalized posterior density at `x` from a fresh model evaluation.
    pub fn posterior_at(&mut self, x: &DVector<f64>) -> Result<f64> {
        let eval = self.model.evaluate(x)?;
        Ok(libm::exp(crate::posterior::log_posterior(&self.prior, &eval, x)))
    }

    pub fn dim(&self) -> usize {
        self.current.x.len()
    }

    /// Row-major `n_samples × dim` chain.
    pub fn chain(&self) -> &[f64] {
        &self.chain
    }

    pub fn chain_row(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.chain[i * n..(i + 1) * n]
    }

    pub fn chain_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_samples() as usize, self.dim(), &self.chain)
    }

    /// One coordinate of the chain as a series.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.chain.iter().skip(j).step_by(self.dim()).copied().collect()
    }

    /// Rows currently held in the chain (after burning).
    pub fn n_samples(&self) -> u64 {
        (self.chain.len() / self.dim().max(1)) as u64
    }

    pub fn n_accepted(&self) -> u64 {
        self.n_accepted
    }

    /// Transitions attempted over the whole run, including burned ones.
    pub fn n_steps(&self) -> u64 {
        self.n_samples() + self.burned
    }

    /// `n_accepted` over all transitions attempted; equals
    /// `n_accepted / n_samples` until samples are burned.
    pub fn accept_rate(&self) -> f64 {
        match self.n_steps() {
            0 => 0.0,
            s => self.n_accepted as f64 / s as f64,
        }
    }

    pub fn call_count(&self) -> u64 {
        self.model.call_count()
    }

    pub fn burned(&self) -> u64 {
        self.burned
    }

    /// Count for a stage index: `−1` for rejections, `1..=max_steps+1` for
    /// acceptances at that stage.
    pub fn step_count(&self, stage: i32) -> u64 {
        let idx = if stage == -1 { 0 } else { stage.max(0) as usize };
        if stage == 0 {
            return 0;
        }
        self.step_count.get(idx).copied().unwrap_or(0)
    }

    /// All `(stage, count)` pairs, rejections first.
    pub fn step_counts(&self) -> Vec<(i32, u64)> {
        let last = self.step_count.len().max(self.policy.stages() + 1);
        (0..last)
            .map(|i| (if i == 0 { -1 } else { i as i32 }, self.step_count.get(i).copied().unwrap_or(0)))
            .collect()
    }

    pub fn singular_warnings(&self) -> u64 {
        self.stats.singular_proposals
    }

    pub fn current(&self) -> &PointState {
        &self.current
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub fn policy(&self) -> &BackoffPolicy {
        &self.policy
    }

    pub fn model(&self) -> &ModelHandle<M> {
        &self.model
    }

    pub fn snapshot(&self) -> SamplerSnapshot {
        let n = self.dim();
        let mut precision = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                precision.push(self.prior.precision()[(i, j)]);
            }
        }
        SamplerSnapshot {
            dim: n,
            chain: self.chain.clone(),
            n_samples: self.n_samples(),
            n_accepted: self.n_accepted,
            call_count: self.call_count(),
            burned: self.burned,
            step_count: self.step_counts(),
            policy: self.policy,
            prior_mean: self.prior.mean().iter().copied().collect(),
            prior_precision: precision,
            current_x: self.current.x.iter().copied().collect(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// Rebuilds a sampler from a snapshot. The model is evaluated once at the
    /// stored current point, which adds one call to the restored count.
    pub fn restore(snapshot: &SamplerSnapshot, model: M) -> Result<Self> {
        let n = snapshot.dim;
        let expect = |what: &'static str, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, found })
            }
        };
        expect("snapshot chain", snapshot.n_samples as usize * n, snapshot.chain.len())?;
        expect("snapshot prior mean", n, snapshot.prior_mean.len())?;
        expect("snapshot prior precision", n * n, snapshot.prior_precision.len())?;
        expect("snapshot current point", n, snapshot.current_x.len())?;
        snapshot.policy.validate()?;
        let prior = GaussianPrior::new(
            DVector::from_vec(snapshot.prior_mean.clone()),
            DMatrix::from_row_slice(n, n, &snapshot.prior_precision),
        )?;
        let mut step_count = vec![0; snapshot.policy.stages() + 1];
        for &(stage, count) in &snapshot.step_count {
            let idx = match stage {
                -1 => 0,
                s if s >= 1 => s as usize,
                _ => return Err(Error::InvalidArgument("invalid stage index in step counts")),
            };
            if idx >= step_count.len() {
                step_count.resize(idx + 1, 0);
            }
            step_count[idx] = count;
        }
        let accepted: u64 = step_count[1..].iter().sum();
        if accepted != snapshot.n_accepted || accepted + step_count[0] != snapshot.n_samples + snapshot.burned {
            return Err(Error::InvalidArgument("snapshot counters are inconsistent"));
        }
        let mut handle = ModelHandle::new(model, n);
        handle.set_call_count(snapshot.call_count);
        let current = initial_state(&mut handle, &prior, DVector::from_vec(snapshot.current_x.clone()))?;
        Ok(Self {
            model: handle,
            prior,
            policy: snapshot.policy,
            current,
            chain: snapshot.chain.clone(),
            n_accepted: snapshot.n_accepted,
            step_count,
            burned: snapshot.burned,
            rng: snapshot.rng.restore()?,
            stats: KernelStats::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::BackoffMode;
    use crate::model::{Linear, ModelEval, Quickstart};
    use core::cell::Cell;
    use rand::RngCore;

    fn quickstart(x0: f64) -> Sampler<Quickstart> {
        let mut s = Sampler::new(DVector::from_element(1, x0), Quickstart::default()).unwrap();
        s.set_prior(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        s
    }

    fn check_counters<M: Model>(s: &Sampler<M>) {
        let accepted: u64 = s.step_counts().iter().filter(|(k, _)| *k >= 1).map(|(_, c)| c).sum();
        assert_eq!(accepted, s.n_accepted());
        assert_eq!(s.n_steps(), s.n_accepted() + s.step_count(-1));
    }

    #[test]
    fn construction() {
        let s = Sampler::new(DVector::from_element(1, 0.5), Quickstart::default()).unwrap();
        assert_eq!(s.call_count(), 1);
        assert!(s.prior().is_flat());
        assert_eq!(s.prior().mean()[0], 0.5);
        assert_eq!(s.policy().mode, BackoffMode::None);

        let positive = |x: &DVector<f64>| {
            Ok(ModelEval::from_indicator(
                (x[0] > 0.0) as u8 as f64,
                x.clone(),
                DMatrix::identity(1, 1),
            ))
        };
        assert_eq!(
            Sampler::new(DVector::from_element(1, -1.0), positive).err(),
            Some(Error::InitialGuessOutsideDomain)
        );
        assert_eq!(
            Sampler::new(DVector::from_element(1, 0.0), Quickstart::default()).err(),
            Some(Error::SingularProposal)
        );
    }

    #[test]
    fn prior_and_policy_setters() {
        let mut s = quickstart(0.5);
        assert!(matches!(
            s.set_prior(DVector::zeros(1), DMatrix::from_element(1, 1, -0.1)),
            Err(Error::NotPsd(_))
        ));
        assert!(s.set_prior(DVector::zeros(2), DMatrix::identity(2, 2)).is_err());
        s.set_prior(DVector::zeros(1), DMatrix::zeros(1, 1)).unwrap();
        assert!(s.prior().is_flat());
        s.set_static(5, 0.2).unwrap();
        assert_eq!(s.step_counts().len(), 7);
        s.set_dynamic(3).unwrap();
        assert_eq!(s.policy().mode, BackoffMode::Dynamic);
        s.set_static(0, 3.0).unwrap();
        assert_eq!(s.policy().mode, BackoffMode::None);
        assert!(s.set_static(2, 1.2).is_err());
    }

    #[test]
    fn resume_continues_chain() {
        let mut a = quickstart(0.5).with_seed(9);
        a.run(100).unwrap();
        a.run(100).unwrap();
        let mut b = quickstart(0.5).with_seed(9);
        b.run(200).unwrap();
        assert_eq!(a.n_samples(), 200);
        assert_eq!(a.chain(), b.chain());
        check_counters(&a);
    }

    #[test]
    fn divisions_do_not_change_the_chain() {
        let mut a = quickstart(0.5).with_seed(3);
        a.set_static(2, 0.3).unwrap();
        a.run(500).unwrap();
        let mut b = quickstart(0.5).with_seed(3);
        b.set_static(2, 0.3).unwrap();
        let mut seen = Vec::new();
        b.run_divided::<Error, _>(500, 7, |s, d, total| {
            seen.push((d, total, s.n_samples()));
            Ok(())
        })
        .unwrap();
        assert_eq!(a.chain(), b.chain());
        assert_eq!(seen.len(), 7);
        assert_eq!(seen.last().unwrap().2, 500);
        assert!(b.run_divided::<Error, _>(0, 1, |_, _, _| Ok(())).is_err());
        assert!(b.run_divided::<Error, _>(5, 0, |_, _, _| Ok(())).is_err());
    }

    #[test]
    fn burn_semantics() {
        let mut s = quickstart(0.5).with_seed(1);
        s.run(50).unwrap();
        let row10 = s.chain_row(10).to_vec();
        let accepted = s.n_accepted();
        s.burn(0).unwrap();
        assert_eq!(s.n_samples(), 50);
        s.burn(10).unwrap();
        assert_eq!(s.n_samples(), 40);
        assert_eq!(s.chain_row(0), row10.as_slice());
        assert_eq!(s.n_accepted(), accepted);
        assert_eq!(s.burned(), 10);
        check_counters(&s);
        assert_eq!(
            s.burn(41),
            Err(Error::BurnTooLarge { requested: 41, available: 40 })
        );
        s.burn(40).unwrap();
        assert_eq!(s.n_samples(), 0);
    }

    #[test]
    fn posterior_at_values() {
        let mut s = quickstart(0.5);
        let calls = s.call_count();
        let p0 = s.posterior_at(&DVector::zeros(1)).unwrap();
        assert!((p0 - libm::exp(-2.0)).abs() < 1e-15);
        assert_eq!(s.call_count(), calls + 1);
        let p1 = s.posterior_at(&DVector::from_element(1, 0.7)).unwrap();
        let lp1 = -0.5 * 0.49 - 0.5 * ((0.49 - 1.0) / 0.5) * ((0.49 - 1.0) / 0.5);
        assert!((p1 / p0 - libm::exp(lp1 + 2.0)).abs() < 1e-12);

        let positive = |x: &DVector<f64>| {
            Ok(ModelEval::from_indicator((x[0] > 0.0) as u8 as f64, x.clone(), DMatrix::identity(1, 1)))
        };
        let mut s = Sampler::new(DVector::from_element(1, 1.0), positive).unwrap();
        assert_eq!(s.posterior_at(&DVector::from_element(1, -1.0)).unwrap(), 0.0);
    }

    #[test]
    fn call_count_matches_instrumented_wrapper() {
        struct Counting<'a> {
            inner: Quickstart,
            calls: &'a Cell<u64>,
        }
        impl Model for Counting<'_> {
            fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
                self.calls.set(self.calls.get() + 1);
                self.inner.evaluate(x)
            }
        }
        for policy in [
            BackoffPolicy::none(),
            BackoffPolicy::fixed(2, 0.2).unwrap(),
            BackoffPolicy::dynamic(2).unwrap(),
        ] {
            let calls = Cell::new(0);
            let model = Counting { inner: Quickstart { y: 3.0, sigma: 0.3 }, calls: &calls };
            let mut s = Sampler::new(DVector::from_element(1, 0.5), model).unwrap().with_seed(5);
            s.set_prior(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
            s.set_policy(policy).unwrap();
            s.run(300).unwrap();
            assert_eq!(s.call_count(), calls.get());
            check_counters(&s);
            if policy.mode == BackoffMode::None {
                assert_eq!(s.call_count(), 1 + 300);
            }
        }
    }

    #[test]
    fn snapshot_round_trip_continues_identically() {
        let mut a = quickstart(0.5).with_seed(17);
        a.set_dynamic(2).unwrap();
        a.run(120).unwrap();
        let snap = a.snapshot();
        let mut b = Sampler::restore(&snap, Quickstart::default()).unwrap();
        assert_eq!(b.call_count(), a.call_count() + 1);
        a.run(80).unwrap();
        b.run(80).unwrap();
        assert_eq!(a.chain(), b.chain());
        assert_eq!(a.step_counts(), b.step_counts());

        let mut bad = snap.clone();
        bad.n_accepted += 1;
        assert!(Sampler::restore(&bad, Quickstart::default()).is_err());
        let wrong_dim = Linear::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(matches!(
            Sampler::restore(&snap, wrong_dim),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..37 {
            rng.next_u32();
        }
        let st = RngState::capture(&rng);
        let mut copy = st.restore().unwrap();
        for _ in 0..100 {
            assert_eq!(rng.next_u64(), copy.next_u64());
        }
        let bad = RngState { algorithm_id: "pcg".into(), state: st.state.clone() };
        assert!(bad.restore().is_err());
    }
}
