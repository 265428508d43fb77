//! Two-state Markov input trajectories for the dynamic regression task.
//!
//! Each signal sits in a "low" or "high" band and random-walks inside it.
//! At every sample it may switch band with a fixed probability; the three
//! samples before a switch are replaced by a linear ramp so the change is
//! gradual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialBand {
    Low,
    High,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub initial: InitialBand,
    pub switch_prob: f64,
}

/// A block of trajectory pairs sharing switching behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub count: usize,
    pub x_p: SignalSpec,
    pub x_m: SignalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovGenConfig {
    /// Samples per trajectory.
    pub horizon: usize,
    pub low: [f64; 2],
    pub high: [f64; 2],
    /// Half-width of the uniform random-walk increment.
    pub step: f64,
    /// Samples replaced by the ramp before each switch.
    pub ramp: usize,
    pub scenarios: Vec<Scenario>,
}

impl Default for MarkovGenConfig {
    fn default() -> Self {
        let spec = |initial, switch_prob| SignalSpec { initial, switch_prob };
        Self {
            horizon: 30,
            low: [0.0, 0.25],
            high: [0.6, 1.0],
            step: 0.05,
            ramp: 3,
            scenarios: vec![
                Scenario {
                    count: 50,
                    x_p: spec(InitialBand::Low, 0.0),
                    x_m: spec(InitialBand::Random, 0.2),
                },
                Scenario {
                    count: 50,
                    x_p: spec(InitialBand::Random, 0.2),
                    x_m: spec(InitialBand::Low, 0.0),
                },
                Scenario {
                    count: 50,
                    x_p: spec(InitialBand::Random, 0.1),
                    x_m: spec(InitialBand::Random, 0.1),
                },
            ],
        }
    }
}

impl MarkovGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("markov generator: {m}")));
        if self.horizon < 2 {
            return bad(format!("horizon {} too short", self.horizon));
        }
        for band in [self.low, self.high] {
            if !(band[0] <= band[1]) {
                return bad(format!("band {band:?} is reversed"));
            }
        }
        if !(self.step >= 0.0) {
            return bad("step must be non-negative".into());
        }
        for s in &self.scenarios {
            for p in [s.x_p.switch_prob, s.x_m.switch_prob] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("switch probability {p} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.scenarios.iter().map(|s| s.count).sum()
    }

    fn range(&self, band: Band) -> [f64; 2] {
        match band {
            Band::Low => self.low,
            Band::High => self.high,
        }
    }
}

/// One generated signal with its band at every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSignal {
    pub values: Vec<f64>,
    pub bands: Vec<Band>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputPair {
    pub x_p: MarkovSignal,
    pub x_m: MarkovSignal,
}

pub fn gen_signal<R: Rng>(cfg: &MarkovGenConfig, spec: &SignalSpec, rng: &mut R) -> MarkovSignal {
    let mut band = match spec.initial {
        InitialBand::Low => Band::Low,
        InitialBand::High => Band::High,
        InitialBand::Random => {
            if rng.random_bool(0.5) {
                Band::High
            } else {
                Band::Low
            }
        }
    };
    let draw = |rng: &mut R, band: Band| {
        let [lo, hi] = cfg.range(band);
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let mut values = Vec::with_capacity(cfg.horizon);
    let mut bands = Vec::with_capacity(cfg.horizon);
    let mut v = draw(rng, band);
    let mut switches = Vec::new();
    for k in 0..cfg.horizon {
        if k > 0 {
            if spec.switch_prob > 0.0 && rng.random_bool(spec.switch_prob) {
                band = match band {
                    Band::Low => Band::High,
                    Band::High => Band::Low,
                };
                v = draw(rng, band);
                switches.push(k);
            } else {
                let [lo, hi] = cfg.range(band);
                let delta = if cfg.step > 0.0 {
                    rng.random_range(-cfg.step..=cfg.step)
                } else {
                    0.0
                };
                v = (v + delta).clamp(lo, hi);
            }
        }
        values.push(v);
        bands.push(band);
    }
    for &k in &switches {
        let anchor = k.saturating_sub(cfg.ramp + 1);
        let span = (k - anchor) as f64;
        let (from, to) = (values[anchor], values[k]);
        for i in anchor + 1..k {
            values[i] = from + (to - from) * (i - anchor) as f64 / span;
        }
    }
    MarkovSignal { values, bands }
}

/// All trajectory pairs, scenario by scenario.
pub fn gen_markov_trajectories(cfg: &MarkovGenConfig, seed: u64) -> Result<Vec<InputPair>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.total());
    for s in &cfg.scenarios {
        for _ in 0..s.count {
            let x_p = gen_signal(cfg, &s.x_p, &mut rng);
            let x_m = gen_signal(cfg, &s.x_m, &mut rng);
            out.push(InputPair { x_p, x_m });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_set_size_and_range() {
        let cfg = MarkovGenConfig::default();
        let pairs = gen_markov_trajectories(&cfg, 1).unwrap();
        assert_eq!(pairs.len(), 150);
        for p in &pairs {
            for s in [&p.x_p, &p.x_m] {
                assert_eq!(s.values.len(), 30);
                assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        // First scenario keeps x_P in the low band.
        assert!(pairs[..50]
            .iter()
            .all(|p| p.x_p.bands.iter().all(|&b| b == Band::Low)));
        assert_eq!(pairs, gen_markov_trajectories(&cfg, 1).unwrap());
        assert_ne!(pairs, gen_markov_trajectories(&cfg, 2).unwrap());
    }

    #[test]
    fn switch_frequency_matches_probability() {
        let cfg = MarkovGenConfig::default();
        let spec = SignalSpec {
            initial: InitialBand::Random,
            switch_prob: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut steps, mut switches) = (0usize, 0usize);
        while steps < 10_000 {
            let s = gen_signal(&cfg, &spec, &mut rng);
            steps += s.bands.len() - 1;
            switches += s.bands.windows(2).filter(|w| w[0] != w[1]).count();
        }
        let freq = switches as f64 / steps as f64;
        assert!((freq - 0.1).abs() <= 0.01, "{freq}");
    }

    #[test]
    fn ramp_precedes_switch() {
        let cfg = MarkovGenConfig {
            step: 0.0,
            ..MarkovGenConfig::default()
        };
        let spec = SignalSpec {
            initial: InitialBand::Low,
            switch_prob: 0.2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for _ in 0..200 {
            let s = gen_signal(&cfg, &spec, &mut rng);
            let switches: Vec<usize> = (1..s.bands.len()).filter(|&k| s.bands[k] != s.bands[k - 1]).collect();
            for &k in &switches {
                let isolated = switches.iter().all(|&o| o == k || o + 4 < k || o > k + 4);
                if k < 4 || !isolated {
                    continue;
                }
                let (from, to) = (s.values[k - 4], s.values[k]);
                for i in 1..4 {
                    let expected = from + (to - from) * i as f64 / 4.0;
                    assert!((s.values[k - 4 + i] - expected).abs() < 1e-12);
                }
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    proptest! {
        #[test]
        fn no_switching_stays_in_band(seed in 0u64..500, high in any::<bool>()) {
            let cfg = MarkovGenConfig::default();
            let spec = SignalSpec {
                initial: if high { InitialBand::High } else { InitialBand::Low },
                switch_prob: 0.0,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = gen_signal(&cfg, &spec, &mut rng);
            let [lo, hi] = if high { cfg.high } else { cfg.low };
            prop_assert!(s.values.iter().all(|v| (lo..=hi).contains(v)));
        }
    }
}
