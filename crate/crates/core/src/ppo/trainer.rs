use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::ActorCritic;
use super::policy::RecurrentState;
use super::{normalize_advantages, td_target, Hyperparams, RATIO_LOG_CAP};
use crate::env::{ActionVector, TradingEnv};
use crate::error::{Error, Result};
use crate::extractor::{normalize_state, StateHistory, StateScales, StateWindow};
use crate::nn::{clip_grad_norm, gaussian, Adam, Parameterized};

/// One stored environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Extractor input at decision time.
    pub window: StateWindow,
    /// Policy recurrent state fed into this step.
    pub recurrent: RecurrentState,
    pub features: Vec<f64>,
    /// Gaussian sample before clamping.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub next_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    /// Clamped into `[-1, 1]`.
    pub action: Vec<f64>,
    /// Unclamped draw (the mean in deterministic mode).
    pub raw: Vec<f64>,
    /// Log-density of `raw`.
    pub log_prob: f64,
}

pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R, deterministic: bool) -> SampledAction {
    let raw = if deterministic {
        mean.to_vec()
    } else {
        gaussian::sample(mean, log_std, rng)
    };
    SampledAction {
        action: ActionVector::new(&raw).as_slice().to_vec(),
        log_prob: gaussian::log_prob(&raw, mean, log_std),
        raw,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub ratio_overflows: u64,
}

/// Mean PPO loss over `batch`:
/// `-clipped surrogate + value_coef * (target - v)^2 - entropy_coef * entropy`.
///
/// With `accumulate` set, gradients of that loss are added into the model.
pub fn minibatch_loss(
    model: &mut ActorCritic,
    batch: &[&Transition],
    advantages: &[f64],
    hyper: &Hyperparams,
    accumulate: bool,
) -> Result<LossBreakdown> {
    if batch.len() != advantages.len() || batch.is_empty() {
        return Err(Error::shape(format!("{} advantages", batch.len()), advantages.len()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut out = LossBreakdown::default();
    let mut clipped = 0usize;
    for (tr, &adv) in batch.iter().zip(advantages) {
        let (fwd, cache) = model.forward(&tr.window, &tr.recurrent)?;
        let pol = &fwd.policy;
        let log_prob = gaussian::log_prob(&tr.action, &pol.mean, &pol.log_std);
        let log_ratio = log_prob - tr.log_prob;
        let overflow = log_ratio > RATIO_LOG_CAP;
        if overflow {
            out.ratio_overflows += 1;
        }
        let ratio = log_ratio.min(RATIO_LOG_CAP).exp();
        let bounded = ratio.clamp(1.0 - hyper.clip_range, 1.0 + hyper.clip_range);
        let surrogate = (ratio * adv).min(bounded * adv);
        if bounded != ratio {
            clipped += 1;
        }
        let target = td_target(tr.reward, tr.next_value, tr.done, hyper.gamma);
        let value_err = pol.value - target;
        let entropy = gaussian::entropy(&pol.log_std);

        out.policy_loss -= scale * surrogate;
        out.value_loss += scale * value_err * value_err;
        out.entropy += scale * entropy;

        if accumulate {
            // gradient flows only through the unclipped branch when it is the minimum
            let d_log_prob = if !overflow && ratio * adv <= bounded * adv {
                -scale * adv * ratio
            } else {
                0.0
            };
            let (g_mean, g_log_std) = gaussian::log_prob_grads(&tr.action, &pol.mean, &pol.log_std);
            let d_mean: Vec<f64> = g_mean.iter().map(|g| d_log_prob * g).collect();
            let d_log_std: Vec<f64> = g_log_std
                .iter()
                .map(|g| d_log_prob * g - hyper.entropy_coef * scale)
                .collect();
            let d_value = hyper.value_coef * 2.0 * value_err * scale;
            model.backward(&cache, &d_mean, &d_log_std, d_value)?;
        }
    }
    out.total = out.policy_loss + hyper.value_coef * out.value_loss - hyper.entropy_coef * out.entropy;
    out.clip_fraction = clipped as f64 / batch.len() as f64;
    if !out.total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss (policy {}, value {}, entropy {})",
            out.policy_loss, out.value_loss, out.entropy
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub update_index: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_reward: f64,
    /// Mean pre-clip gradient norm over the minibatch steps.
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub ratio_overflows: u64,
}

/// Optimiser state and randomness owned by one training loop.
#[derive(Debug, Clone)]
pub struct PpoTrainer {
    pub hyper: Hyperparams,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub updates: usize,
    pub ratio_overflows: u64,
}

impl PpoTrainer {
    pub fn new(hyper: Hyperparams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            adam: Adam::new(hyper.adam()),
            hyper,
            rng: ChaCha8Rng::seed_from_u64(seed),
            updates: 0,
            ratio_overflows: 0,
        })
    }
}

/// Runs `epochs` passes of shuffled minibatch PPO over `buffer`, then clears it.
///
/// A minibatch producing a non-finite loss, gradient or parameter aborts the
/// update and leaves the model at its last finite parameters.
pub fn update(model: &mut ActorCritic, buffer: &mut Vec<Transition>, trainer: &mut PpoTrainer) -> Result<UpdateStats> {
    if buffer.is_empty() {
        return Err(Error::Contract("update called with an empty buffer".into()));
    }
    let hyper = trainer.hyper;
    let mut advantages: Vec<f64> = buffer
        .iter()
        .map(|t| super::advantage(t.reward, t.value, t.next_value, t.done, hyper.gamma))
        .collect();
    if hyper.normalize_advantages {
        normalize_advantages(&mut advantages);
    }

    let mut indices: Vec<usize> = (0..buffer.len()).collect();
    let mut sums = LossBreakdown::default();
    let mut grad_norm_sum = 0.0;
    let mut minibatches = 0usize;
    for _ in 0..hyper.epochs {
        indices.shuffle(&mut trainer.rng);
        for chunk in indices.chunks(hyper.minibatch_size) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| &buffer[i]).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            model.zero_grad();
            let loss = minibatch_loss(model, &batch, &adv, &hyper, true)?;
            let mut params = model.params_mut();
            let norm = clip_grad_norm(&mut params, hyper.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::Numerical("non-finite gradient norm".into()));
            }
            let snapshot: Vec<Vec<f64>> = params.iter().map(|p| p.values.clone()).collect();
            trainer.adam.step(params)?;
            if !model.all_finite() {
                for (p, old) in model.params_mut().into_iter().zip(snapshot) {
                    p.values = old;
                }
                return Err(Error::Numerical("optimizer step produced non-finite parameters".into()));
            }
            sums.policy_loss += loss.policy_loss;
            sums.value_loss += loss.value_loss;
            sums.entropy += loss.entropy;
            sums.clip_fraction += loss.clip_fraction;
            sums.ratio_overflows += loss.ratio_overflows;
            grad_norm_sum += norm;
            minibatches += 1;
        }
    }
    let m = minibatches as f64;
    let stats = UpdateStats {
        update_index: trainer.updates,
        policy_loss: sums.policy_loss / m,
        value_loss: sums.value_loss / m,
        entropy: sums.entropy / m,
        mean_reward: buffer.iter().map(|t| t.reward).sum::<f64>() / buffer.len() as f64,
        grad_norm: grad_norm_sum / m,
        clip_fraction: sums.clip_fraction / m,
        ratio_overflows: sums.ratio_overflows,
    };
    if stats.ratio_overflows > 0 {
        log::warn!("update {}: {} ratios hit the cap", stats.update_index, stats.ratio_overflows);
    }
    trainer.updates += 1;
    trainer.ratio_overflows += sums.ratio_overflows;
    buffer.clear();
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutcome {
    pub steps: usize,
    pub log: Vec<UpdateStats>,
    /// Summed scaled reward of every completed episode, in order.
    pub episode_rewards: Vec<f64>,
    /// Set when an update diverged; the model keeps its last finite parameters.
    pub divergence: Option<String>,
}

/// Collects `total_steps` environment steps with the stochastic policy,
/// updating every `update_frequency` steps. Episodes restart at the start of
/// the environment's range; a trailing partial buffer is discarded.
pub fn train(
    env: &mut TradingEnv<'_>,
    scales: &StateScales,
    model: &mut ActorCritic,
    trainer: &mut PpoTrainer,
    total_steps: usize,
) -> Result<TrainOutcome> {
    let mut outcome = TrainOutcome::default();
    if total_steps == 0 {
        return Ok(outcome);
    }
    let window_len = model.config.extractor.window;
    let mut history = StateHistory::new(window_len);
    history.push(normalize_state(&env.reset().as_vector(), scales)?);
    let mut recurrent = model.initial_state();
    let mut window = history.window()?;
    let mut current = model.act(&window, &recurrent)?;
    let mut buffer: Vec<Transition> = Vec::with_capacity(trainer.hyper.update_frequency);
    let mut episode_reward = 0.0;

    for _ in 0..total_steps {
        let pol = &current.policy;
        let sampled = sample_action(&pol.mean, &pol.log_std, &mut trainer.rng, false);
        let result = env.step(&ActionVector::new(&sampled.action))?;
        episode_reward += result.reward;
        outcome.steps += 1;

        let window_in = std::mem::replace(&mut window, StateWindow { states: Vec::new() });
        let recurrent_in = recurrent.clone();
        let next = if result.done {
            outcome.episode_rewards.push(episode_reward);
            episode_reward = 0.0;
            history.clear();
            history.push(normalize_state(&env.reset().as_vector(), scales)?);
            recurrent = model.initial_state();
            window = history.window()?;
            model.act(&window, &recurrent)?
        } else {
            history.push(normalize_state(&result.next_state.as_vector(), scales)?);
            recurrent = current.policy.next.clone();
            window = history.window()?;
            model.act(&window, &recurrent)?
        };
        buffer.push(Transition {
            window: window_in,
            recurrent: recurrent_in,
            features: current.features.clone(),
            action: sampled.raw,
            log_prob: sampled.log_prob,
            reward: result.reward,
            value: current.policy.value,
            done: result.done,
            next_value: if result.done { 0.0 } else { next.policy.value },
        });
        current = next;

        if buffer.len() == trainer.hyper.update_frequency {
            match update(model, &mut buffer, trainer) {
                Ok(stats) => outcome.log.push(stats),
                Err(e @ (Error::Numerical(_) | Error::NonFiniteGradient(_))) => {
                    outcome.divergence = Some(e.to_string());
                    return Ok(outcome);
                }
                Err(e) => return Err(e),
            }
            current = model.act(&window, &recurrent)?;
        }
    }
    Ok(outcome)
}

/// Writes `update_index,policy_loss,value_loss,entropy,mean_reward,grad_norm`.
pub fn write_train_log(log: &[UpdateStats], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["update_index", "policy_loss", "value_loss", "entropy", "mean_reward", "grad_norm"])?;
    for s in log {
        w.write_record([
            s.update_index.to_string(),
            s.policy_loss.to_string(),
            s.value_loss.to_string(),
            s.entropy.to_string(),
            s.mean_reward.to_string(),
            s.grad_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::extractor::ExtractorConfig;
    use crate::market::{IndicatorParams, Panel, TurbulenceParams};
    use crate::nn::gradcheck::check_gradients;
    use crate::ppo::ModelConfig;
    use crate::synthetic::{prepare, SyntheticMarket};
    use rand_distr::{Distribution, Uniform};

    fn toy_panel() -> Panel {
        let raw = SyntheticMarket::uniform(2, 110, 0.001, 0.02, 5).generate().unwrap();
        let turb = TurbulenceParams {
            lookback: 10,
            ..TurbulenceParams::default()
        };
        prepare(&raw, &IndicatorParams::default(), &turb).unwrap()
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            extractor: ExtractorConfig {
                state_dim: 13,
                lstm_hidden: 6,
                feature_dim: 5,
                window: 3,
            },
            policy_hidden: 4,
            n_actions: 2,
        }
    }

    fn toy_hyper() -> Hyperparams {
        Hyperparams {
            update_frequency: 16,
            epochs: 2,
            minibatch_size: 8,
            ..Hyperparams::default()
        }
    }

    fn run(seed: u64, hyper: Hyperparams, steps: usize) -> (ActorCritic, TrainOutcome) {
        let panel = toy_panel();
        let cfg = EnvConfig {
            initial_capital: 10_000.0,
            ..EnvConfig::for_stocks(2)
        };
        let scales = StateScales::from_panel(&panel, &cfg);
        let mut env = TradingEnv::new(&panel, 0, 20, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = ActorCritic::new(toy_config(), &mut rng);
        let mut trainer = PpoTrainer::new(hyper, seed + 1).unwrap();
        let outcome = train(&mut env, &scales, &mut model, &mut trainer, steps).unwrap();
        (model, outcome)
    }

    fn random_window(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> StateWindow {
        let u = Uniform::new(-1.0, 1.0).unwrap();
        StateWindow {
            states: (0..cfg.extractor.window)
                .map(|_| (0..cfg.extractor.state_dim).map(|_| u.sample(rng)).collect())
                .collect(),
        }
    }

    fn transition(model: &ActorCritic, rng: &mut ChaCha8Rng, log_prob_shift: f64) -> Transition {
        let window = random_window(rng, &model.config);
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let recurrent = RecurrentState {
            h: (0..model.config.policy_hidden).map(|_| u.sample(rng)).collect(),
            c: (0..model.config.policy_hidden).map(|_| u.sample(rng)).collect(),
        };
        let out = model.act(&window, &recurrent).unwrap();
        let action: Vec<f64> = out.policy.mean.iter().map(|m| m + u.sample(rng)).collect();
        Transition {
            log_prob: gaussian::log_prob(&action, &out.policy.mean, &out.policy.log_std) + log_prob_shift,
            features: out.features,
            window,
            recurrent,
            action,
            reward: u.sample(rng),
            value: out.policy.value,
            done: false,
            next_value: u.sample(rng),
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let hyper = Hyperparams {
            learning_rate: 0.0,
            ..toy_hyper()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let initial = ActorCritic::new(toy_config(), &mut rng);
        let (model, outcome) = run(3, hyper, 40);
        assert_eq!(outcome.steps, 40);
        assert_eq!(outcome.log.len(), 2);
        assert_eq!(outcome.episode_rewards.len(), 2);
        assert!(outcome.divergence.is_none());
        assert_eq!(model.checkpoint(), initial.checkpoint());
        let idx: Vec<usize> = outcome.log.iter().map(|s| s.update_index).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn training_moves_parameters_deterministically() {
        let (a, out_a) = run(11, toy_hyper(), 48);
        let (b, out_b) = run(11, toy_hyper(), 48);
        assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
        assert_eq!(out_a, out_b);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_ne!(a, ActorCritic::new(toy_config(), &mut rng));
        let (c, _) = run(12, toy_hyper(), 48);
        assert_ne!(a, c);
    }

    #[test]
    fn loss_at_old_policy_is_minus_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut model = ActorCritic::new(toy_config(), &mut rng);
        let batch: Vec<Transition> = (0..6).map(|_| transition(&model, &mut rng, 0.0)).collect();
        let adv = [0.5, -1.0, 2.0, 0.25, -0.75, 1.5];
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = minibatch_loss(&mut model, &refs, &adv, &toy_hyper(), false).unwrap();
        let mean: f64 = adv.iter().sum::<f64>() / 6.0;
        assert!((loss.policy_loss + mean).abs() < 1e-14);
        assert_eq!(loss.clip_fraction, 0.0);
    }

    #[test]
    fn two_transition_loss_by_hand() {
        let mut model = ActorCritic::zeros(toy_config());
        model.policy.actor.bias.values = vec![0.1, -0.2];
        model.policy.log_std.values = vec![0.0, -0.5];
        model.policy.critic.bias.values = vec![0.5];
        let hyper = toy_hyper();
        let window = StateWindow {
            states: vec![vec![0.0; 13]; 3],
        };
        let make = |action: Vec<f64>, old: f64, reward: f64, done: bool| Transition {
            window: window.clone(),
            recurrent: RecurrentState::zeros(4),
            features: vec![0.0; 5],
            action,
            log_prob: old,
            reward,
            value: 0.5,
            done,
            next_value: 0.3,
        };
        let t1 = make(vec![0.3, 0.0], -2.0, 1.0, false);
        let t2 = make(vec![-0.4, 0.1], -1.0, -0.5, true);
        let adv = [1.0, -1.0];
        let loss = minibatch_loss(&mut model, &[&t1, &t2], &adv, &hyper, false).unwrap();

        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let density = |a: [f64; 2]| -> f64 {
            let z0 = a[0] - 0.1;
            let z1 = (a[1] + 0.2) / (-0.5f64).exp();
            -0.5 * z0 * z0 - 0.5 * z1 * z1 + 0.5 - ln2pi
        };
        // r1 is about 1.8 and r2 about 0.56, so both land on the clipped branch
        let r1 = (density([0.3, 0.0]) + 2.0).exp();
        let r2 = (density([-0.4, 0.1]) + 1.0).exp();
        assert!(r1 > 1.2 && r2 < 0.8);
        let s1 = (r1 * 1.0).min(r1.clamp(0.8, 1.2) * 1.0);
        let s2 = (r2 * -1.0).min(r2.clamp(0.8, 1.2) * -1.0);
        let policy = -(s1 + s2) / 2.0;
        let target1: f64 = 1.0 + 0.99 * 0.3;
        let target2: f64 = -0.5;
        let value = ((0.5 - target1).powi(2) + (0.5 - target2).powi(2)) / 2.0;
        let entropy = (0.0 + 0.5 + 0.5 * ln2pi) + (-0.5 + 0.5 + 0.5 * ln2pi);
        assert!((loss.policy_loss - policy).abs() < 1e-12, "{} vs {policy}", loss.policy_loss);
        assert!((loss.value_loss - value).abs() < 1e-12);
        assert!((loss.entropy - entropy).abs() < 1e-12, "{} vs {entropy}", loss.entropy);
        let total = policy + 0.5 * value - 0.01 * entropy;
        assert!((loss.total - total).abs() < 1e-12);
    }

    #[test]
    fn composed_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cfg = ModelConfig {
            extractor: ExtractorConfig {
                state_dim: 8,
                lstm_hidden: 8,
                feature_dim: 6,
                window: 4,
            },
            policy_hidden: 8,
            n_actions: 3,
        };
        let hyper = Hyperparams {
            entropy_coef: 0.05,
            ..Hyperparams::default()
        };
        for draw in 0..10 {
            let mut model = ActorCritic::new(cfg, &mut rng);
            // push the actor away from its tiny initial scale so every path carries signal
            for v in &mut model.policy.actor.weight.values {
                *v *= 50.0;
            }
            let batch: Vec<Transition> = (0..3).map(|i| transition(&model, &mut rng, 0.05 * i as f64)).collect();
            let adv = [0.7, -1.1, 0.4];
            let refs: Vec<&Transition> = batch.iter().collect();
            model.zero_grad();
            minibatch_loss(&mut model, &refs, &adv, &hyper, true).unwrap();
            let loss = |m: &ActorCritic| -> f64 {
                let mut m = m.clone();
                minibatch_loss(&mut m, &refs, &adv, &hyper, false).unwrap().total
            };
            let report = check_gradients(&mut model, loss, 1e-5);
            assert!(report.max_rel_error < 1e-6, "draw {draw}: {report:?}");
        }
    }

    #[test]
    fn train_log_csv() {
        let stats = UpdateStats {
            update_index: 0,
            policy_loss: -0.5,
            value_loss: 1.25,
            entropy: 2.0,
            mean_reward: 0.125,
            grad_norm: 0.5,
            clip_fraction: 0.0,
            ratio_overflows: 0,
        };
        let mut buf = Vec::new();
        write_train_log(&[stats], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "update_index,policy_loss,value_loss,entropy,mean_reward,grad_norm\n0,-0.5,1.25,2,0.125,0.5\n"
        );
    }

    #[test]
    fn deterministic_sampling_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_action(&[0.2, 1.7], &[0.0, 0.0], &mut rng, true);
        assert_eq!(s.raw, vec![0.2, 1.7]);
        assert_eq!(s.action, vec![0.2, 1.0]);
    }
}
