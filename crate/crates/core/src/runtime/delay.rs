//! Link delay models. The stochastic model is a shifted log-normal clipped
//! to the band the control stack is specified for; traces replay measured
//! delays cyclically. `Fixed` is exact and unclipped so experiments can pin
//! the delay anywhere, including zero.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Clip band for sampled (not fixed) delays, seconds.
pub const DELAY_CLIP_MIN_S: f64 = 0.28;
pub const DELAY_CLIP_MAX_S: f64 = 6.0;
/// Stochastic model defaults: `shift + LogNormal(mu, sigma)`.
pub const DELAY_SHIFT_S: f64 = 0.2;
pub const DELAY_LOGNORMAL_MU: f64 = -0.7;
pub const DELAY_LOGNORMAL_SIGMA: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DelayModel {
    /// Exact delay, bypasses clipping (zero is allowed).
    Fixed(f64),
    /// Cyclic replay of a recorded delay sequence, clipped to the band.
    Trace(Vec<f64>),
    /// `shift + LogNormal(mu, sigma)`, clipped to the band.
    Stochastic { shift: f64, mu: f64, sigma: f64 },
}

impl DelayModel {
    pub fn stochastic_default() -> Self {
        DelayModel::Stochastic {
            shift: DELAY_SHIFT_S,
            mu: DELAY_LOGNORMAL_MU,
            sigma: DELAY_LOGNORMAL_SIGMA,
        }
    }
}

/// Stateful sampler: owns the trace cursor and the random stream.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    model: DelayModel,
    cursor: usize,
}

impl DelaySampler {
    pub fn new(model: DelayModel) -> Self {
        DelaySampler { model, cursor: 0 }
    }

    pub fn sample(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.model {
            DelayModel::Fixed(d) => *d,
            DelayModel::Trace(values) => {
                assert!(!values.is_empty(), "delay trace must not be empty");
                let v = values[self.cursor % values.len()];
                self.cursor += 1;
                v.clamp(DELAY_CLIP_MIN_S, DELAY_CLIP_MAX_S)
            }
            DelayModel::Stochastic { shift, mu, sigma } => {
                let ln = LogNormal::new(*mu, *sigma).expect("finite log-normal parameters");
                (shift + ln.sample(rng)).clamp(DELAY_CLIP_MIN_S, DELAY_CLIP_MAX_S)
            }
        }
    }
}

/// Parse CLI spellings: `fixed:2.0`, `stochastic`,
/// `stochastic:shift,mu,sigma`, `trace:0.5,1.0,2.0`.
impl FromStr for DelayModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "fixed" => {
                let d: f64 = rest.parse().map_err(|_| format!("bad fixed delay {rest:?}"))?;
                if !d.is_finite() || d < 0.0 {
                    return Err(format!("fixed delay must be finite and >= 0, got {d}"));
                }
                Ok(DelayModel::Fixed(d))
            }
            "stochastic" => {
                if rest.is_empty() {
                    return Ok(DelayModel::stochastic_default());
                }
                let parts: Vec<f64> = rest
                    .split(',')
                    .map(|p| p.parse().map_err(|_| format!("bad number {p:?}")))
                    .collect::<Result<_, _>>()?;
                if parts.len() != 3 {
                    return Err("stochastic takes shift,mu,sigma".into());
                }
                Ok(DelayModel::Stochastic { shift: parts[0], mu: parts[1], sigma: parts[2] })
            }
            "trace" => {
                let values: Vec<f64> = rest
                    .split(',')
                    .map(|p| p.parse().map_err(|_| format!("bad number {p:?}")))
                    .collect::<Result<_, _>>()?;
                if values.is_empty() {
                    return Err("trace needs at least one delay".into());
                }
                Ok(DelayModel::Trace(values))
            }
            other => Err(format!("unknown delay model {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn fixed_is_exact_and_unclipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = DelaySampler::new(DelayModel::Fixed(0.0));
        assert_eq!(s.sample(&mut rng), 0.0);
        let mut s = DelaySampler::new(DelayModel::Fixed(20.0));
        assert_eq!(s.sample(&mut rng), 20.0);
    }

    #[test]
    fn trace_replays_cyclically_and_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = DelaySampler::new(DelayModel::Trace(vec![0.1, 1.0, 9.0]));
        let out: Vec<f64> = (0..6).map(|_| s.sample(&mut rng)).collect();
        assert_eq!(out, vec![0.28, 1.0, 6.0, 0.28, 1.0, 6.0]);
    }

    #[test]
    fn stochastic_stays_in_band_and_is_seed_deterministic() {
        let sample_n = |seed: u64| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = DelaySampler::new(DelayModel::stochastic_default());
            (0..1000).map(|_| s.sample(&mut rng)).collect()
        };
        let a = sample_n(42);
        assert_eq!(a, sample_n(42));
        assert!(a.iter().all(|&d| (DELAY_CLIP_MIN_S..=DELAY_CLIP_MAX_S).contains(&d)));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        // shift + exp(mu + sigma^2/2) = 0.2 + 0.745, minus a little for
        // clipping the upper tail.
        assert!((0.5..1.3).contains(&mean), "mean delay {mean}");
        assert_ne!(a, sample_n(43));
    }

    #[test]
    fn parses_cli_spellings() {
        assert_eq!("fixed:2.0".parse::<DelayModel>().unwrap(), DelayModel::Fixed(2.0));
        assert_eq!(
            "stochastic".parse::<DelayModel>().unwrap(),
            DelayModel::stochastic_default()
        );
        assert_eq!(
            "stochastic:0.1,-0.5,0.7".parse::<DelayModel>().unwrap(),
            DelayModel::Stochastic { shift: 0.1, mu: -0.5, sigma: 0.7 }
        );
        assert_eq!(
            "trace:0.5,1.5".parse::<DelayModel>().unwrap(),
            DelayModel::Trace(vec![0.5, 1.5])
        );
        assert!("fixed:-1".parse::<DelayModel>().is_err());
        assert!("warp:3".parse::<DelayModel>().is_err());
    }
}
