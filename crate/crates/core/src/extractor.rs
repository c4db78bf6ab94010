//! LSTM feature extractor over a window of past environment states.
//!
//! The window is run oldest-first through one LSTM layer from zero state; the
//! final hidden state passes through three tanh-activated linear layers.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::market::Panel;
use crate::nn::{tanh_backward, tanh_inplace, Linear, LinearCache, LstmCell, LstmSequenceCache, ParamTensor, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub state_dim: usize,
    pub lstm_hidden: usize,
    pub feature_dim: usize,
    /// Number of past states fed to the LSTM.
    pub window: usize,
}

impl ExtractorConfig {
    pub fn for_state_dim(state_dim: usize) -> Self {
        Self {
            state_dim,
            lstm_hidden: 128,
            feature_dim: 128,
            window: 30,
        }
    }
}

/// Fixed per-block divisors applied to the raw state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateScales {
    pub balance: f64,
    pub prices: Vec<f64>,
    pub holdings: f64,
    pub macd: f64,
    pub rsi: f64,
    pub cci: f64,
    pub adx: f64,
}

impl StateScales {
    /// Balance by initial capital, prices by the panel's first-day price,
    /// holdings by `h_max`, indicators by 100.
    pub fn from_panel(panel: &Panel, config: &EnvConfig) -> Self {
        Self {
            balance: config.initial_capital,
            prices: panel.adj_close[0].clone(),
            holdings: config.h_max as f64,
            macd: 100.0,
            rsi: 100.0,
            cci: 100.0,
            adx: 100.0,
        }
    }

    pub fn unit(n_stocks: usize) -> Self {
        Self {
            balance: 1.0,
            prices: vec![1.0; n_stocks],
            holdings: 1.0,
            macd: 1.0,
            rsi: 1.0,
            cci: 1.0,
            adx: 1.0,
        }
    }

    pub fn n_stocks(&self) -> usize {
        self.prices.len()
    }
}

pub fn normalize_state(raw: &[f64], scales: &StateScales) -> Result<Vec<f64>> {
    let n = scales.n_stocks();
    if raw.len() != 1 + 6 * n {
        return Err(Error::shape(format!("state of length {}", 1 + 6 * n), raw.len()));
    }
    let mut out = Vec::with_capacity(raw.len());
    out.push(raw[0] / scales.balance);
    out.extend(raw[1..=n].iter().zip(&scales.prices).map(|(p, s)| p / s));
    let blocks = [scales.holdings, scales.macd, scales.rsi, scales.cci, scales.adx];
    for (b, divisor) in blocks.iter().enumerate() {
        let from = 1 + n * (b + 1);
        out.extend(raw[from..from + n].iter().map(|v| v / divisor));
    }
    Ok(out)
}

/// Exactly `T` state vectors, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWindow {
    pub states: Vec<Vec<f64>>,
}

impl StateWindow {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Keeps the last `window` states and left-pads by repeating the earliest one.
pub fn warm_pad(history: &[Vec<f64>], window: usize) -> Result<StateWindow> {
    let first = history
        .first()
        .ok_or_else(|| Error::EmptyInput("state history".into()))?;
    let tail = &history[history.len().saturating_sub(window)..];
    let mut states = Vec::with_capacity(window);
    states.extend(std::iter::repeat_n(first, window - tail.len()).cloned());
    states.extend(tail.iter().cloned());
    Ok(StateWindow { states })
}

/// Bounded history of normalized states for one episode.
#[derive(Debug, Clone)]
pub struct StateHistory {
    window: usize,
    states: VecDeque<Vec<f64>>,
}

impl StateHistory {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            states: VecDeque::with_capacity(window),
        }
    }

    pub fn clear(&mut self) {
        self.states.clear();
    }

    pub fn push(&mut self, state: Vec<f64>) {
        if self.states.len() == self.window {
            self.states.pop_front();
        }
        self.states.push_back(state);
    }

    pub fn window(&self) -> Result<StateWindow> {
        let v: Vec<Vec<f64>> = self.states.iter().cloned().collect();
        warm_pad(&v, self.window)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub config: ExtractorConfig,
    pub lstm: LstmCell,
    pub linear1: Linear,
    pub linear2: Linear,
    pub linear3: Linear,
}

#[derive(Debug, Clone)]
pub struct ExtractorCache {
    sequence: LstmSequenceCache,
    layers: [(LinearCache, Vec<f64>); 3],
}

impl FeatureExtractor {
    pub fn new<R: Rng + ?Sized>(config: ExtractorConfig, rng: &mut R) -> Self {
        let gain = std::f64::consts::SQRT_2;
        let (h, f) = (config.lstm_hidden, config.feature_dim);
        Self {
            config,
            lstm: LstmCell::init("extractor.lstm", config.state_dim, h, rng),
            linear1: Linear::orthogonal("extractor.linear1", h, f, gain, rng),
            linear2: Linear::orthogonal("extractor.linear2", f, f, gain, rng),
            linear3: Linear::orthogonal("extractor.linear3", f, f, gain, rng),
        }
    }

    pub fn zeros(config: ExtractorConfig) -> Self {
        let (h, f) = (config.lstm_hidden, config.feature_dim);
        Self {
            config,
            lstm: LstmCell::zeros("extractor.lstm", config.state_dim, h),
            linear1: Linear::zeros("extractor.linear1", h, f),
            linear2: Linear::zeros("extractor.linear2", f, f),
            linear3: Linear::zeros("extractor.linear3", f, f),
        }
    }

    fn check_window(&self, window: &StateWindow) -> Result<()> {
        if window.len() != self.config.window {
            return Err(Error::shape(format!("window of {} states", self.config.window), window.len()));
        }
        if let Some(bad) = window.states.iter().find(|s| s.len() != self.config.state_dim) {
            return Err(Error::shape(format!("state of length {}", self.config.state_dim), bad.len()));
        }
        Ok(())
    }

    pub fn forward(&self, window: &StateWindow) -> Result<(Vec<f64>, ExtractorCache)> {
        self.check_window(window)?;
        let (h_last, sequence) = self.lstm.forward_sequence(&window.states)?;
        let mut x = h_last;
        let mut caches = Vec::with_capacity(3);
        for layer in [&self.linear1, &self.linear2, &self.linear3] {
            let (mut y, cache) = layer.forward(&x)?;
            tanh_inplace(&mut y);
            caches.push((cache, y.clone()));
            x = y;
        }
        let layers: [(LinearCache, Vec<f64>); 3] = caches.try_into().expect("three layers");
        Ok((x, ExtractorCache { sequence, layers }))
    }

    /// Feature vector, each component in (-1, 1).
    pub fn extract(&self, window: &StateWindow) -> Result<Vec<f64>> {
        self.forward(window).map(|(f, _)| f)
    }

    /// Accumulates gradients for a gradient `d_features` on the output.
    pub fn backward(&mut self, cache: &ExtractorCache, d_features: &[f64]) -> Result<()> {
        if d_features.len() != self.config.feature_dim {
            return Err(Error::shape(self.config.feature_dim, d_features.len()));
        }
        let mut grad = d_features.to_vec();
        for (layer, (lin_cache, out)) in [&mut self.linear3, &mut self.linear2, &mut self.linear1]
            .into_iter()
            .zip(cache.layers.iter().rev())
        {
            let dz = tanh_backward(out, &grad);
            grad = layer.backward(lin_cache, &dz)?;
        }
        self.lstm.backward_sequence(&cache.sequence, &grad)?;
        Ok(())
    }
}

impl Parameterized for FeatureExtractor {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.lstm.params();
        v.extend(self.linear1.params());
        v.extend(self.linear2.params());
        v.extend(self.linear3.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.lstm.params_mut();
        v.extend(self.linear1.params_mut());
        v.extend(self.linear2.params_mut());
        v.extend(self.linear3.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    fn small() -> ExtractorConfig {
        ExtractorConfig {
            state_dim: 8,
            lstm_hidden: 8,
            feature_dim: 6,
            window: 4,
        }
    }

    fn random_window(rng: &mut ChaCha8Rng, cfg: &ExtractorConfig) -> StateWindow {
        let u = Uniform::new(-1.0, 1.0).unwrap();
        StateWindow {
            states: (0..cfg.window)
                .map(|_| (0..cfg.state_dim).map(|_| u.sample(rng)).collect())
                .collect(),
        }
    }

    #[test]
    fn warm_pad_rules() {
        let s = |x: f64| vec![x];
        assert_eq!(warm_pad(&[s(0.0)], 4).unwrap().states, vec![s(0.0); 4]);
        let full = vec![s(1.0), s(2.0), s(3.0)];
        assert_eq!(warm_pad(&full, 3).unwrap().states, full);
        assert_eq!(
            warm_pad(&[s(0.0), s(1.0), s(2.0)], 5).unwrap().states,
            vec![s(0.0), s(0.0), s(0.0), s(1.0), s(2.0)]
        );
        assert!(warm_pad(&[], 3).is_err());
    }

    #[test]
    fn history_rolls() {
        let mut h = StateHistory::new(2);
        h.push(vec![1.0]);
        assert_eq!(h.window().unwrap().states, vec![vec![1.0], vec![1.0]]);
        h.push(vec![2.0]);
        h.push(vec![3.0]);
        assert_eq!(h.window().unwrap().states, vec![vec![2.0], vec![3.0]]);
    }

    #[test]
    fn normalization() {
        let scales = StateScales {
            balance: 1e6,
            prices: vec![50.0, 20.0],
            holdings: 100.0,
            macd: 100.0,
            rsi: 100.0,
            cci: 100.0,
            adx: 100.0,
        };
        let raw = [1e6, 50.0, 30.0, 100.0, 0.0, 1.0, -2.0, 50.0, 70.0, -150.0, 80.0, 25.0, 40.0];
        let n = normalize_state(&raw, &scales).unwrap();
        assert_eq!(n[0], 1.0);
        assert_eq!(&n[1..3], &[1.0, 1.5]);
        assert_eq!(n[3], 1.0);
        assert_eq!(&n[7..9], &[0.5, 0.7]);
        let unit = StateScales::unit(2);
        let once = normalize_state(&raw, &unit).unwrap();
        assert_eq!(normalize_state(&once, &unit).unwrap(), once);
        assert!(normalize_state(&raw[..5], &scales).is_err());
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let cfg = small();
        let ex = FeatureExtractor::zeros(cfg);
        let w = StateWindow {
            states: vec![vec![0.3; cfg.state_dim]; cfg.window],
        };
        assert_eq!(ex.extract(&w).unwrap(), vec![0.0; cfg.feature_dim]);
    }

    #[test]
    fn default_output_is_128_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ExtractorConfig {
            window: 5,
            ..ExtractorConfig::for_state_dim(181)
        };
        let ex = FeatureExtractor::new(cfg, &mut rng);
        let w = random_window(&mut rng, &cfg);
        let f = ex.extract(&w).unwrap();
        assert_eq!(f.len(), 128);
        assert!(f.iter().all(|v| v.abs() < 1.0));
        assert_eq!(f, ex.extract(&w).unwrap());
    }

    #[test]
    fn wrong_state_dim_rejected() {
        let ex = FeatureExtractor::zeros(small());
        let w = StateWindow {
            states: vec![vec![0.0; 7]; 4],
        };
        assert!(matches!(ex.extract(&w), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn sensitive_to_every_window_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = small();
        let ex = FeatureExtractor::new(cfg, &mut rng);
        let w = random_window(&mut rng, &cfg);
        let base = ex.extract(&w).unwrap();
        for t in 0..cfg.window {
            let mut w2 = w.clone();
            w2.states[t][0] += 0.5;
            assert_ne!(ex.extract(&w2).unwrap(), base, "position {t}");
        }
    }

    #[test]
    fn gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = small();
        let u = Uniform::new(-1.0, 1.0).unwrap();
        for _ in 0..10 {
            let mut ex = FeatureExtractor::new(cfg, &mut rng);
            let w = random_window(&mut rng, &cfg);
            let weights: Vec<f64> = (0..cfg.feature_dim).map(|_| u.sample(&mut rng)).collect();
            let loss = |ex: &FeatureExtractor| -> f64 {
                ex.extract(&w).unwrap().iter().zip(&weights).map(|(a, b)| a * b).sum()
            };
            ex.zero_grad();
            let (_, cache) = ex.forward(&w).unwrap();
            ex.backward(&cache, &weights).unwrap();
            let report = check_gradients(&mut ex, loss, 1e-5);
            assert!(report.max_rel_error < 1e-6, "{report:?}");
        }
    }
}
