use std::hash::Hasher;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PesConfig {
    pub sigma: f64,
    pub truncation: usize,
    pub pairs: usize,
    pub min_horizon: usize,
    pub max_horizon: usize,
    pub meta_iterations: usize,
    pub meta_lr: f64,
}

impl Default for PesConfig {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            truncation: 50,
            pairs: 8,
            min_horizon: 100,
            max_horizon: 2000,
            meta_iterations: 2000,
            meta_lr: 1e-4,
        }
    }
}

impl PesConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("PES config: {msg}")));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if self.truncation == 0 || self.pairs == 0 {
            return bad("truncation length and pair count must be at least 1");
        }
        if self.min_horizon == 0 || self.min_horizon > self.max_horizon {
            return bad("horizon range must satisfy 1 <= min <= max");
        }
        if !(self.meta_lr > 0.0 && self.meta_lr.is_finite()) {
            return bad("meta learning rate must be positive");
        }
        Ok(())
    }

    /// Log-uniform integer horizon in `[min_horizon, max_horizon]`.
    pub fn sample_horizon(&self, rng: &RngStream) -> usize {
        let (lo, hi) = ((self.min_horizon as f64).ln(), (self.max_horizon as f64).ln());
        let t = rng.generator().uniform_range(lo, hi).exp().round() as usize;
        t.clamp(self.min_horizon, self.max_horizon)
    }
}

/// Result of advancing one trajectory through part of a truncation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unrolled {
    /// Mean inner loss over the unrolled steps; `None` if the trajectory diverged.
    pub mean_loss: Option<f64>,
    /// Order-sensitive hash of the batches consumed.
    pub batch_hash: u64,
}

/// Something PES can perturb and unroll: a distribution over episodes and an
/// inner trajectory advanced under meta-parameters φ.
pub trait Unroller: Sync {
    type Episode: Clone + Send + Sync;
    type Trajectory: Clone + Send;

    /// Samples an episode and its starting trajectory for the given horizon.
    fn reset(&self, horizon: usize, rng: &RngStream) -> Result<(Self::Episode, Self::Trajectory)>;

    /// Advances `trajectory` through inner steps `start..start + len`.
    fn unroll(
        &self,
        phi: &ParamSet,
        episode: &Self::Episode,
        trajectory: &mut Self::Trajectory,
        start: usize,
        len: usize,
    ) -> Result<Unrolled>;
}

/// Antithetic pair of trajectories sharing an episode, plus PES memory ξ.
#[derive(Clone, Debug)]
pub struct ParticlePair<E, T> {
    pub episode: E,
    pub plus: T,
    pub minus: T,
    /// Sum of all perturbations applied since the last reset.
    pub xi: ParamSet,
    pub elapsed: usize,
    pub horizon: usize,
    /// Number of resets so far; selects the next episode stream.
    pub resets: u64,
}

/// Starts episode number `resets` for the pair addressed by `pair_rng`.
pub fn pes_reset<U: Unroller>(
    unroller: &U,
    cfg: &PesConfig,
    trainable: &ParamSet,
    pair_rng: &RngStream,
    resets: u64,
) -> Result<ParticlePair<U::Episode, U::Trajectory>> {
    let episode_rng = pair_rng.child("episode", resets);
    let horizon = cfg.sample_horizon(&episode_rng.child("horizon", 0));
    let (episode, trajectory) = unroller.reset(horizon, &episode_rng)?;
    Ok(ParticlePair {
        episode,
        plus: trajectory.clone(),
        minus: trajectory,
        xi: trainable.zeros_like(),
        elapsed: 0,
        horizon,
        resets,
    })
}

/// `φ ± ε` on the coordinates named in `eps`; everything else copied.
pub fn perturbed(phi: &ParamSet, eps: &ParamSet, sign: f64) -> Result<ParamSet> {
    let mut out = phi.clone();
    for (name, e) in eps.iter() {
        let t = out
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("perturbation names unknown tensor {name:?}")))?;
        if !t.same_shape(e) {
            return Err(Error::Shape(format!("perturbation for {name:?} has the wrong shape")));
        }
        for (p, d) in t.data_mut().iter_mut().zip(e.data()) {
            *p += sign * d;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PairOutcome {
    /// `ξ·(L⁺ − L⁻)/(2σ²)`, or `None` when the pair diverged.
    pub contribution: Option<ParamSet>,
    pub loss_plus: f64,
    pub loss_minus: f64,
    /// Whether both trajectories consumed the same batches.
    pub coupled: bool,
}

#[derive(Clone, Debug)]
pub struct TruncationOutcome {
    pub grad: ParamSet,
    /// Mean of `(L⁺ + L⁻)/2` over surviving pairs (NaN if none survived).
    pub mean_loss: f64,
    pub dropped: usize,
    pub pairs: Vec<PairOutcome>,
}

/// One PES truncation for every pair. `pair_rngs[i]` addresses pair `i`; the
/// perturbation for this truncation is drawn from its `noise[iteration]` child.
/// Pairs are processed in parallel on the current rayon pool, and the estimate
/// is reduced in pair order.
#[allow(clippy::too_many_arguments)]
pub fn pes_truncation<U: Unroller>(
    unroller: &U,
    cfg: &PesConfig,
    phi: &ParamSet,
    trainable: &ParamSet,
    pairs: &mut [ParticlePair<U::Episode, U::Trajectory>],
    pair_rngs: &[RngStream],
    iteration: u64,
) -> Result<TruncationOutcome> {
    if pairs.is_empty() || pairs.len() != pair_rngs.len() {
        return Err(Error::InvalidArgument(format!("{} pairs for {} streams", pairs.len(), pair_rngs.len())));
    }
    let sigma2 = cfg.sigma * cfg.sigma;
    let outcomes: Vec<Result<PairOutcome>> = pairs
        .par_iter_mut()
        .zip(pair_rngs.par_iter())
        .map(|(pair, rng)| {
            let noise = rng.child("noise", iteration).generator().normals(trainable.numel(), cfg.sigma);
            let eps = trainable.with_flat(&noise)?;
            let phi_plus = perturbed(phi, &eps, 1.0)?;
            let phi_minus = perturbed(phi, &eps, -1.0)?;
            let len = cfg.truncation.min(pair.horizon - pair.elapsed);
            let up = unroller.unroll(&phi_plus, &pair.episode, &mut pair.plus, pair.elapsed, len)?;
            let down = unroller.unroll(&phi_minus, &pair.episode, &mut pair.minus, pair.elapsed, len)?;
            let coupled = up.batch_hash == down.batch_hash;
            let (Some(lp), Some(lm)) = (up.mean_loss, down.mean_loss) else {
                log::warn!("PES pair diverged at iteration {iteration}; dropping its contribution and resetting");
                *pair = pes_reset(unroller, cfg, trainable, rng, pair.resets + 1)?;
                return Ok(PairOutcome { contribution: None, loss_plus: f64::NAN, loss_minus: f64::NAN, coupled });
            };
            pair.xi.axpy(1.0, &eps)?;
            let contribution = pair.xi.scaled((lp - lm) / (2.0 * sigma2));
            pair.elapsed += len;
            if pair.elapsed >= pair.horizon {
                *pair = pes_reset(unroller, cfg, trainable, rng, pair.resets + 1)?;
            }
            Ok(PairOutcome { contribution: Some(contribution), loss_plus: lp, loss_minus: lm, coupled })
        })
        .collect();

    let mut grad = trainable.zeros_like();
    let mut kept = 0usize;
    let mut loss_sum = 0.0;
    let mut pairs_out = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let outcome = outcome?;
        if let Some(c) = &outcome.contribution {
            grad.axpy(1.0, c)?;
            loss_sum += 0.5 * (outcome.loss_plus + outcome.loss_minus);
            kept += 1;
        }
        pairs_out.push(outcome);
    }
    if kept > 0 {
        grad = grad.scaled(1.0 / kept as f64);
    }
    Ok(TruncationOutcome {
        grad,
        mean_loss: if kept > 0 { loss_sum / kept as f64 } else { f64::NAN },
        dropped: pairs_out.len() - kept,
        pairs: pairs_out,
    })
}

/// Order-sensitive hash of a sequence of batch fingerprints.
pub fn chain_hash(fingerprints: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = fnv::FnvHasher::default();
    for f in fingerprints {
        h.write_u64(f);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// Stateless probe whose per-step loss is `aᵀφ`.
    struct LinearProbe {
        a: Vec<f64>,
    }

    impl Unroller for LinearProbe {
        type Episode = ();
        type Trajectory = ();

        fn reset(&self, _horizon: usize, _rng: &RngStream) -> Result<((), ())> {
            Ok(((), ()))
        }

        fn unroll(&self, phi: &ParamSet, _: &(), _: &mut (), _start: usize, _len: usize) -> Result<Unrolled> {
            let loss = phi.flatten().iter().zip(&self.a).map(|(p, a)| p * a).sum();
            Ok(Unrolled { mean_loss: Some(loss), batch_hash: 0 })
        }
    }

    /// Loss that ignores φ entirely.
    struct Constant;

    impl Unroller for Constant {
        type Episode = ();
        type Trajectory = ();

        fn reset(&self, _horizon: usize, _rng: &RngStream) -> Result<((), ())> {
            Ok(((), ()))
        }

        fn unroll(&self, _: &ParamSet, _: &(), _: &mut (), _: usize, _: usize) -> Result<Unrolled> {
            Ok(Unrolled { mean_loss: Some(3.0), batch_hash: 7 })
        }
    }

    fn phi() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        p
    }

    fn cfg() -> PesConfig {
        PesConfig { min_horizon: 1000, max_horizon: 1000, ..PesConfig::default() }
    }

    #[test]
    fn reset_zeroes_memory_and_respects_range() {
        let cfg = PesConfig::default();
        let root = RngStream::new(5);
        let pair = pes_reset(&Constant, &cfg, &phi(), &root, 0).unwrap();
        assert!(pair.xi.flatten().iter().all(|&v| v == 0.0));
        for i in 0..10_000 {
            let t = cfg.sample_horizon(&root.child("h", i));
            assert!((cfg.min_horizon..=cfg.max_horizon).contains(&t));
        }
        let again = pes_reset(&Constant, &cfg, &phi(), &root, 0).unwrap();
        assert_eq!(pair.horizon, again.horizon);
    }

    #[test]
    fn constant_loss_gives_zero_estimate() {
        let root = RngStream::new(1);
        let rngs = vec![root.child("pair", 0)];
        let mut pairs = vec![pes_reset(&Constant, &cfg(), &phi(), &rngs[0], 0).unwrap()];
        let out = pes_truncation(&Constant, &cfg(), &phi(), &phi(), &mut pairs, &rngs, 0).unwrap();
        assert!(out.grad.flatten().iter().all(|&v| v == 0.0));
        assert!(out.pairs[0].coupled);
    }

    #[test]
    fn memory_accumulates_perturbations() {
        let probe = LinearProbe { a: vec![1.0, 2.0, 3.0] };
        let rng = RngStream::new(2).child("pair", 0);
        let rngs = vec![rng.clone()];
        let mut pairs = vec![pes_reset(&probe, &cfg(), &phi(), &rng, 0).unwrap()];
        pes_truncation(&probe, &cfg(), &phi(), &phi(), &mut pairs, &rngs, 0).unwrap();
        pes_truncation(&probe, &cfg(), &phi(), &phi(), &mut pairs, &rngs, 1).unwrap();
        let e1 = rng.child("noise", 0).generator().normals(3, 0.01);
        let e2 = rng.child("noise", 1).generator().normals(3, 0.01);
        let xi = pairs[0].xi.flatten();
        for i in 0..3 {
            assert_eq!(xi[i], 0.0 + e1[i] + e2[i]);
        }
        assert_eq!(pairs[0].elapsed, 100);
    }

    #[test]
    fn horizon_end_triggers_reset() {
        let cfg = PesConfig { min_horizon: 60, max_horizon: 60, ..PesConfig::default() };
        let rng = RngStream::new(3);
        let rngs = vec![rng.clone()];
        let mut pairs = vec![pes_reset(&Constant, &cfg, &phi(), &rng, 0).unwrap()];
        pes_truncation(&Constant, &cfg, &phi(), &phi(), &mut pairs, &rngs, 0).unwrap();
        assert_eq!(pairs[0].elapsed, 50);
        pes_truncation(&Constant, &cfg, &phi(), &phi(), &mut pairs, &rngs, 1).unwrap();
        assert_eq!((pairs[0].elapsed, pairs[0].resets), (0, 1));
    }

    #[test]
    fn config_validation() {
        assert!(PesConfig::default().validate().is_ok());
        assert!(PesConfig { sigma: 0.0, ..PesConfig::default() }.validate().is_err());
        assert!(PesConfig { truncation: 0, ..PesConfig::default() }.validate().is_err());
        assert!(PesConfig { min_horizon: 3000, ..PesConfig::default() }.validate().is_err());
    }
}
