//! Group relative policy optimization of the keyframe policy.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{generate_episode, response_for_action, rollout_from_response, EnvConfig};
use crate::math::{exp, sqrt};
use crate::policy::{logprob, logprob_and_grad, sample_action, FrameObservation, KeyframeAction, PolicyParams};
use crate::rewards::{mean_breakdown, RewardBreakdown, RewardWeights};
use crate::seed::{child_seed, rng_for, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    /// Rollouts per group.
    pub group_size: usize,
    /// KL penalty against the frozen initial policy.
    pub beta: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    /// Gradient steps taken on each group.
    pub epochs_per_group: usize,
    pub advantage_epsilon: f64,
    pub iterations: usize,
    /// Largest keyframe count the policy can emit.
    pub k_max: usize,
    /// Standard deviation of the random initial parameters.
    pub init_scale: f64,
    /// Chance that a rollout's response text is truncated before parsing.
    pub malformed_response_prob: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            beta: 0.04,
            clip_eps: 0.2,
            learning_rate: 0.05,
            epochs_per_group: 1,
            advantage_epsilon: 1e-8,
            iterations: 300,
            k_max: 8,
            init_scale: 0.1,
            malformed_response_prob: 0.0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("grpo.group_size", "must be at least 2"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("grpo.beta", "must be finite and >= 0"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("grpo.clip_eps", "must lie in (0, 1)"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("grpo.learning_rate", "must be finite and > 0"));
        }
        if self.epochs_per_group == 0 {
            return Err(Error::config("grpo.epochs_per_group", "must be at least 1"));
        }
        if !(self.advantage_epsilon.is_finite() && self.advantage_epsilon > 0.0) {
            return Err(Error::config("grpo.advantage_epsilon", "must be finite and > 0"));
        }
        if !(1..=64).contains(&self.k_max) {
            return Err(Error::config("grpo.k_max", "must lie in 1..=64"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::config("grpo.init_scale", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.malformed_response_prob) {
            return Err(Error::config("grpo.malformed_response_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `(r - mean) / std` with the population std; all zeros when the group is
/// (numerically) constant.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("reward"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = sqrt(rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n);
    if std < epsilon {
        return Ok(alloc::vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)` with `rho = exp(new - old)`.
pub fn clipped_surrogate(logp_new: f64, logp_old: f64, advantage: f64, clip_eps: f64) -> Result<f64> {
    let rho = exp(logp_new - logp_old);
    if !rho.is_finite() {
        return Err(Error::NonFinite("probability ratio"));
    }
    Ok((rho * advantage).min(rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage))
}

/// `exp(d) - d - 1` with `d = logp_ref - logp_new`.
pub fn kl_estimate(logp_new: f64, logp_ref: f64) -> Result<f64> {
    let d = logp_ref - logp_new;
    let e = exp(d);
    if !e.is_finite() {
        return Err(Error::NonFinite("KL estimate"));
    }
    Ok((e - d - 1.0).max(0.0))
}

/// One sampled action with everything the update needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub action: KeyframeAction,
    pub logp_old: f64,
    pub logp_ref: f64,
    pub breakdown: RewardBreakdown,
    /// False when the response text failed to parse.
    pub parsed: bool,
}

/// `N` rollouts on one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub episode_seed: u64,
    pub observations: Vec<FrameObservation>,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.breakdown.r_total).collect()
    }
}

/// Diagnostics of one [`grpo_step`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    /// KL to the reference before the update.
    pub mean_kl: f64,
    /// Norm of the first epoch's objective gradient.
    pub grad_norm: f64,
    pub objective: f64,
}

/// Ascend `(1/N) sum_n [surrogate_n - beta * kl_n]`.
pub fn grpo_step(params: &PolicyParams, group: &RolloutGroup, cfg: &GrpoConfig) -> Result<(PolicyParams, StepStats)> {
    cfg.validate()?;
    if let Some(name) = params.first_non_finite() {
        return Err(Error::NonFiniteGradient(format!("parameter {name} is not finite")));
    }
    let rewards = group.rewards();
    let adv = group_advantages(&rewards, cfg.advantage_epsilon)?;
    let n = group.rollouts.len() as f64;
    let mut stats = StepStats {
        mean_reward: rewards.iter().sum::<f64>() / n,
        mean_abs_advantage: adv.iter().map(|a| a.abs()).sum::<f64>() / n,
        ..StepStats::default()
    };

    let mut current = params.clone();
    for epoch in 0..cfg.epochs_per_group {
        let mut grad = PolicyParams::zeros(current.shape());
        let (mut objective, mut kl_sum) = (0.0, 0.0);
        for (r, &a) in group.rollouts.iter().zip(&adv) {
            let (lp, g) = logprob_and_grad(&current, &group.observations, &r.action, true)?;
            let rho = exp(lp - r.logp_old);
            let surrogate = clipped_surrogate(lp, r.logp_old, a, cfg.clip_eps)?;
            let kl = kl_estimate(lp, r.logp_ref)?;
            objective += surrogate - cfg.beta * kl;
            kl_sum += kl;
            // the unclipped branch carries the gradient when it is the minimum
            let surrogate_coef = if rho * a <= surrogate { a * rho } else { 0.0 };
            let kl_coef = cfg.beta * (exp(r.logp_ref - lp) - 1.0);
            grad.add_scaled(&g, (surrogate_coef + kl_coef) / n);
        }
        if let Some(name) = grad.first_non_finite() {
            return Err(Error::NonFiniteGradient(String::from(name)));
        }
        if epoch == 0 {
            stats.mean_kl = kl_sum / n;
            stats.grad_norm = grad.norm();
            stats.objective = objective / n;
        }
        current.add_scaled(&grad, cfg.learning_rate);
    }
    Ok((current, stats))
}

/// Sample and score a group on the episode with `episode_seed`.
pub fn collect_group(
    params: &PolicyParams,
    reference: &PolicyParams,
    env: &EnvConfig,
    weights: &RewardWeights,
    cfg: &GrpoConfig,
    episode_seed: u64,
    rollout_seed: (u64, u64),
) -> Result<RolloutGroup> {
    let episode = generate_episode(env, episode_seed)?;
    let mut rollouts = Vec::with_capacity(cfg.group_size);
    for n in 0..cfg.group_size {
        let mut rng = rng_for(rollout_seed.0, Stream::Rollout, rollout_seed.1, n as u64);
        let action = sample_action(params, &episode.observations, &mut rng)?;
        let logp_ref = logprob(reference, &episode.observations, &action)?;
        let mut response = response_for_action(&episode, &action);
        if cfg.malformed_response_prob > 0.0 && rng.random_bool(cfg.malformed_response_prob) {
            response.truncate(response.len() / 2);
        }
        let scored = rollout_from_response(&episode, &response, n, env, weights, &mut rng)?;
        let (breakdown, parsed) = match scored {
            Ok(outcome) => (outcome.breakdown, true),
            Err(_) => (RewardBreakdown::failed(), false),
        };
        rollouts.push(Rollout {
            logp_old: action.logprob,
            logp_ref,
            action,
            breakdown,
            parsed,
        });
    }
    Ok(RolloutGroup {
        episode_seed,
        observations: episode.observations,
        rollouts,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    pub r_k: f64,
    pub r_a: f64,
    pub r_g: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub heldout_jf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub params: PolicyParams,
    pub log: Vec<TrainingRecord>,
}

/// Train from `init` (also the frozen reference) for `cfg.iterations`
/// groups.
pub fn run_training(
    env: &EnvConfig,
    weights: &RewardWeights,
    init: &PolicyParams,
    cfg: &GrpoConfig,
    seed: u64,
) -> Result<TrainingRun> {
    run_training_with(env, weights, init, cfg, seed, |_, _| Ok(None))
}

/// [`run_training`] with a hook called after every update; whatever it
/// returns lands in the record's `heldout_jf`.
pub fn run_training_with(
    env: &EnvConfig,
    weights: &RewardWeights,
    init: &PolicyParams,
    cfg: &GrpoConfig,
    seed: u64,
    mut heldout: impl FnMut(usize, &PolicyParams) -> Result<Option<f64>>,
) -> Result<TrainingRun> {
    env.validate()?;
    weights.validate()?;
    cfg.validate()?;
    let reference = init.clone();
    let mut params = init.clone();
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let episode_seed = child_seed(seed, Stream::Env, it as u64);
        let group = collect_group(&params, &reference, env, weights, cfg, episode_seed, (seed, it as u64))?;
        let (next, stats) = grpo_step(&params, &group, cfg)?;
        params = next;
        let means: Vec<RewardBreakdown> = group.rollouts.iter().map(|r| r.breakdown).collect();
        let m = mean_breakdown(&means);
        log.push(TrainingRecord {
            iteration: it,
            mean_reward: stats.mean_reward,
            r_k: m.r_k,
            r_a: m.r_a,
            r_g: m.r_g,
            mean_kl: stats.mean_kl,
            grad_norm: stats.grad_norm,
            heldout_jf: heldout(it, &params)?,
        });
    }
    Ok(TrainingRun { params, log })
}

/// Initial parameters drawn from the policy stream of `seed`.
pub fn init_params(cfg: &GrpoConfig, seed: u64) -> Result<PolicyParams> {
    let shape = crate::policy::PolicyShape::new(cfg.k_max);
    PolicyParams::random(shape, cfg.init_scale, &mut rng_for(seed, Stream::Policy, 0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{LocalInstruction, PolicyShape};
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[0.5, 0.5, 0.5], 1e-8).unwrap(), vec![0.0; 3]);
        assert_eq!(group_advantages(&[0.0, 1.0], 1e-8).unwrap(), vec![-1.0, 1.0]);
        let a = group_advantages(&[0.2, 0.4, 0.6, 0.8], 1e-8).unwrap();
        // population std is sqrt(0.05)
        let s = libm::sqrt(0.05);
        for (got, want) in a.iter().zip([-0.3 / s, -0.1 / s, 0.1 / s, 0.3 / s]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(a[3], 1.34164, epsilon = 1e-5);
        assert_eq!(group_advantages(&[1.0], 1e-8), Err(Error::GroupTooSmall(1)));
        assert!(group_advantages(&[1.0, f64::NAN], 1e-8).is_err());
    }

    #[test]
    fn surrogate_and_kl_examples() {
        assert_abs_diff_eq!(clipped_surrogate(-1.0, -1.0, 0.7, 0.2).unwrap(), 0.7, epsilon = 1e-15);
        let ln15 = libm::log(1.5);
        assert_abs_diff_eq!(clipped_surrogate(ln15, 0.0, 1.0, 0.2).unwrap(), 1.2, epsilon = 1e-12);
        let ln05 = libm::log(0.5);
        assert_abs_diff_eq!(clipped_surrogate(ln05, 0.0, -1.0, 0.2).unwrap(), -0.8, epsilon = 1e-12);
        assert!(clipped_surrogate(1e6, 0.0, 1.0, 0.2).is_err());

        assert_eq!(kl_estimate(-2.0, -2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_estimate(0.0, 1.0).unwrap(),
            core::f64::consts::E - 2.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(kl_estimate(1.0, 0.0).unwrap(), 0.367879, epsilon = 1e-6);
        assert!(kl_estimate(0.0, 1e6).is_err());
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(rewards in proptest::collection::vec(-5.0f64..5.0, 2..16), shift in -3.0f64..3.0) {
            let a = group_advantages(&rewards, 1e-8).unwrap();
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let std = libm::sqrt(a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n);
            if a.iter().any(|x| *x != 0.0) {
                prop_assert!(mean.abs() <= 1e-9);
                prop_assert!((std - 1.0).abs() <= 1e-9);
                let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
                let b = group_advantages(&shifted, 1e-8).unwrap();
                let negated: Vec<f64> = rewards.iter().map(|r| -r).collect();
                let c = group_advantages(&negated, 1e-8).unwrap();
                for i in 0..a.len() {
                    prop_assert!((a[i] - b[i]).abs() <= 1e-6);
                    prop_assert!((a[i] + c[i]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn clipping_never_helps(new in -3.0f64..3.0, old in -3.0f64..3.0, adv in -3.0f64..3.0, eps in 0.01f64..0.99) {
            let rho = libm::exp(new - old);
            prop_assert!(clipped_surrogate(new, old, adv, eps).unwrap() <= rho * adv + 1e-12);
        }

        #[test]
        fn kl_is_nonnegative(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let k = kl_estimate(a, b).unwrap();
            prop_assert!(k >= 0.0);
            prop_assert_eq!(k == 0.0, a == b || (a - b).abs() < 1e-8);
        }
    }

    fn obs(presence: f64) -> FrameObservation {
        FrameObservation {
            presence_score: presence,
            time_position: 0.5,
            sound_active: 0.0,
            post_gap: 0.0,
            crowding: 0.0,
        }
    }

    /// Two frames, K fixed at 1; picking frame 1 is rewarded.
    fn crafted_group(params: &PolicyParams) -> RolloutGroup {
        let observations = vec![obs(0.0), obs(1.0)];
        let rollouts = (0..8)
            .map(|i| {
                let frame = i % 2;
                let action = KeyframeAction {
                    selected: vec![frame],
                    instructions: vec![LocalInstruction::all()],
                    logprob: 0.0,
                };
                let lp = logprob(params, &observations, &action).unwrap();
                Rollout {
                    action: KeyframeAction { logprob: lp, ..action },
                    logp_old: lp,
                    logp_ref: lp,
                    breakdown: RewardBreakdown {
                        r_total: frame as f64,
                        ..RewardBreakdown::default()
                    },
                    parsed: true,
                }
            })
            .collect();
        RolloutGroup {
            episode_seed: 0,
            observations,
            rollouts,
        }
    }

    #[test]
    fn rewarded_feature_gains_weight() {
        let params = PolicyParams::zeros(PolicyShape::new(1));
        let group = crafted_group(&params);
        let (next, stats) = grpo_step(&params, &group, &GrpoConfig::default()).unwrap();
        assert!(next.w_select[0] > params.w_select[0]);
        assert_eq!(stats.mean_reward, 0.5);
        assert_eq!(stats.mean_abs_advantage, 1.0);
        assert_eq!(stats.mean_kl, 0.0);
    }

    #[test]
    fn flat_group_without_kl_leaves_params_alone() {
        let params = init_params(&GrpoConfig::default(), 3).unwrap();
        let mut group = crafted_group(&params);
        for r in &mut group.rollouts {
            r.breakdown.r_total = 0.25;
        }
        let cfg = GrpoConfig {
            beta: 0.0,
            ..GrpoConfig::default()
        };
        let (next, stats) = grpo_step(&params, &group, &cfg).unwrap();
        assert_eq!(next, params);
        assert_eq!(stats.grad_norm, 0.0);
    }

    #[test]
    fn strong_kl_anchors_repeated_updates() {
        let params = PolicyParams::zeros(PolicyShape::new(1));
        let group = crafted_group(&params);
        let moved = |beta: f64| {
            let cfg = GrpoConfig {
                beta,
                learning_rate: 1e-3,
                epochs_per_group: 4,
                clip_eps: 0.5,
                ..GrpoConfig::default()
            };
            let (next, _) = grpo_step(&params, &group, &cfg).unwrap();
            let mut diff = next;
            diff.add_scaled(&params, -1.0);
            diff.norm()
        };
        assert!(moved(1e3) < moved(0.0), "{} vs {}", moved(1e3), moved(0.0));
    }

    #[test]
    fn non_finite_params_are_named() {
        let mut params = PolicyParams::zeros(PolicyShape::new(1));
        let group = crafted_group(&params);
        params.w_count[0] = f64::NAN;
        match grpo_step(&params, &group, &GrpoConfig::default()) {
            Err(Error::NonFiniteGradient(msg)) => assert!(msg.contains("w_count")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_iterations_return_the_init() {
        let cfg = GrpoConfig {
            iterations: 0,
            ..GrpoConfig::default()
        };
        let init = init_params(&cfg, 1).unwrap();
        let run = run_training(&EnvConfig::default(), &RewardWeights::default(), &init, &cfg, 1).unwrap();
        assert_eq!(run.params, init);
        assert!(run.log.is_empty());
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = GrpoConfig {
            iterations: 15,
            ..GrpoConfig::default()
        };
        let init = init_params(&cfg, 2).unwrap();
        let env = EnvConfig::default();
        let w = RewardWeights::default();
        let a = run_training(&env, &w, &init, &cfg, 2).unwrap();
        let b = run_training(&env, &w, &init, &cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log.len(), 15);
        assert_ne!(a.params, init);
        assert!(a.log.iter().all(|r| r.mean_kl >= 0.0 && r.heldout_jf.is_none()));
    }

    #[test]
    fn unparseable_responses_score_zero_and_stay_in_the_group() {
        let cfg = GrpoConfig {
            malformed_response_prob: 1.0,
            ..GrpoConfig::default()
        };
        let params = init_params(&cfg, 4).unwrap();
        let group = collect_group(
            &params,
            &params,
            &EnvConfig::default(),
            &RewardWeights::default(),
            &cfg,
            77,
            (4, 0),
        )
        .unwrap();
        assert_eq!(group.rollouts.len(), cfg.group_size);
        assert!(group
            .rollouts
            .iter()
            .all(|r| !r.parsed && r.breakdown == RewardBreakdown::failed()));
        let (next, _) = grpo_step(&params, &group, &cfg).unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn config_ranges_are_checked() {
        let bad = [
            GrpoConfig {
                group_size: 1,
                ..GrpoConfig::default()
            },
            GrpoConfig {
                beta: -1.0,
                ..GrpoConfig::default()
            },
            GrpoConfig {
                clip_eps: 1.0,
                ..GrpoConfig::default()
            },
            GrpoConfig {
                learning_rate: 0.0,
                ..GrpoConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { .. })));
        }
    }
}
