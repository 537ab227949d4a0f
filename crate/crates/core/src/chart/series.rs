use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ChartError, Direction, Feature, Quantity, TargetSpec, MAX_HORIZON};

pub const START_PRICE: f64 = 100.0;

/// A stretch of the log-price random walk with constant drift and volatility
/// per period. `duration` counts increments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub duration: usize,
    pub drift: f64,
    pub volatility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    /// Lookback window size: the part of the series that is charted.
    pub length: usize,
    /// Longest horizon the series must be able to label; the generated
    /// series carries this many extra points past the lookback.
    pub max_horizon: usize,
    pub frequency: String,
    pub regimes: Vec<Regime>,
    pub features: Vec<Feature>,
    pub seed: u64,
}

impl SeriesSpec {
    pub fn single_regime(length: usize, drift: f64, volatility: f64, seed: u64) -> Self {
        Self {
            length,
            max_horizon: MAX_HORIZON,
            frequency: "daily".into(),
            regimes: vec![Regime {
                duration: length + MAX_HORIZON,
                drift,
                volatility,
            }],
            features: vec![Feature::Close],
            seed,
        }
    }

    pub fn total_len(&self) -> usize {
        self.length + self.max_horizon
    }

    pub fn validate(&self) -> Result<(), ChartError> {
        if self.max_horizon == 0 {
            return Err(ChartError::InvalidSpec {
                field: "max_horizon",
                reason: "must be positive".into(),
            });
        }
        if self.length < 2 * self.max_horizon + 2 {
            return Err(ChartError::InvalidSpec {
                field: "length",
                reason: format!(
                    "{} is shorter than 2*max_horizon+2 = {}",
                    self.length,
                    2 * self.max_horizon + 2
                ),
            });
        }
        if self.regimes.is_empty() {
            return Err(ChartError::InvalidSpec {
                field: "regimes",
                reason: "at least one regime is required".into(),
            });
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if !(r.volatility >= 0.0) || !r.volatility.is_finite() {
                return Err(ChartError::InvalidSpec {
                    field: "regimes.volatility",
                    reason: format!("regime {i} has volatility {}", r.volatility),
                });
            }
            if !r.drift.is_finite() {
                return Err(ChartError::InvalidSpec {
                    field: "regimes.drift",
                    reason: format!("regime {i} has non-finite drift"),
                });
            }
        }
        let covered: usize = self.regimes.iter().map(|r| r.duration).sum();
        if covered < self.total_len() {
            return Err(ChartError::InvalidSpec {
                field: "regimes.duration",
                reason: format!(
                    "durations sum to {covered}, need at least length + max_horizon = {}",
                    self.total_len()
                ),
            });
        }
        Ok(())
    }
}

/// Regime-switching geometric random walk of `length + max_horizon` points.
/// Within a regime each log increment is `drift + volatility * z`, z ~ N(0, 1).
pub fn generate_series(spec: &SeriesSpec) -> Result<Vec<f64>, ChartError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.total_len();
    let mut out = Vec::with_capacity(total);
    let mut log_return = 0.0f64;
    out.push(START_PRICE);
    let mut regimes = spec.regimes.iter();
    let mut current = regimes.next().expect("validated non-empty");
    let mut left = current.duration;
    while out.len() < total {
        while left == 0 {
            current = regimes.next().expect("validated coverage");
            left = current.duration;
        }
        let z: f64 = if current.volatility > 0.0 {
            StandardNormal.sample(&mut rng)
        } else {
            0.0
        };
        log_return += current.drift + current.volatility * z;
        out.push(START_PRICE * log_return.exp());
        left -= 1;
    }
    Ok(out)
}

/// Population standard deviation of log increments `k` in `(start, end]`,
/// where increment `k` is `ln s[k] - ln s[k-1]`.
pub fn realized_volatility(series: &[f64], start: usize, end: usize) -> f64 {
    let incs: Vec<f64> = (start + 1..=end)
        .map(|k| series[k].ln() - series[k - 1].ln())
        .collect();
    if incs.is_empty() {
        return 0.0;
    }
    let n = incs.len() as f64;
    let mean = incs.iter().sum::<f64>() / n;
    (incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Rise/fall label for the lookback ending at index `t`. Exact ties are `Down`.
pub fn label_sample(series: &[f64], t: usize, target: TargetSpec) -> Result<Direction, ChartError> {
    let h = target.horizon;
    let insufficient = || ChartError::InsufficientContinuation {
        len: series.len(),
        t,
        horizon: h,
    };
    if t + h >= series.len() {
        return Err(insufficient());
    }
    let up = match target.quantity {
        Quantity::Price => series[t + h] > series[t],
        Quantity::Volatility => {
            if t < h {
                return Err(insufficient());
            }
            realized_volatility(series, t, t + h) > realized_volatility(series, t - h, t)
        }
    };
    Ok(if up { Direction::Up } else { Direction::Down })
}

/// Trailing simple moving average; early points average what is available.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for i in 0..series.len() {
        acc += series[i];
        if i >= window {
            acc -= series[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_walk_is_constant() {
        let s = generate_series(&SeriesSpec::single_regime(200, 0.0, 0.0, 1)).unwrap();
        assert_eq!(s.len(), 263);
        assert!(s.iter().all(|&v| v == START_PRICE));
    }

    #[test]
    fn positive_drift_without_noise_strictly_increases() {
        let s = generate_series(&SeriesSpec::single_regime(200, 0.01, 0.0, 1)).unwrap();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn increment_std_matches_volatility() {
        let s = generate_series(&SeriesSpec::single_regime(10_000, 0.0, 0.02, 7)).unwrap();
        let sd = realized_volatility(&s, 0, s.len() - 1);
        assert!((sd - 0.02).abs() <= 0.002, "{sd}");
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_series(&SeriesSpec::single_regime(300, 0.0, 0.01, 3)).unwrap();
        let b = generate_series(&SeriesSpec::single_regime(300, 0.0, 0.01, 3)).unwrap();
        let c = generate_series(&SeriesSpec::single_regime(300, 0.0, 0.01, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut spec = SeriesSpec::single_regime(100, 0.0, 0.01, 1);
        let err = generate_series(&spec).unwrap_err().to_string();
        assert!(err.contains("length"), "{err}");
        spec.length = 200;
        spec.regimes[0].volatility = -1.0;
        let err = generate_series(&spec).unwrap_err().to_string();
        assert!(err.contains("volatility"), "{err}");
        spec.regimes[0] = Regime {
            duration: 10,
            drift: 0.0,
            volatility: 0.0,
        };
        let err = generate_series(&spec).unwrap_err().to_string();
        assert!(err.contains("duration"), "{err}");
    }

    #[test]
    fn price_labels() {
        let inc: Vec<f64> = (0..20).map(|i| 1.0 + i as f64).collect();
        let t = TargetSpec::new(Quantity::Price, 5).unwrap();
        assert_eq!(label_sample(&inc, 10, t).unwrap(), Direction::Up);
        let flat = vec![3.0; 200];
        for h in [5, 21, 63] {
            let t = TargetSpec::new(Quantity::Price, h).unwrap();
            assert_eq!(label_sample(&flat, 100, t).unwrap(), Direction::Down);
        }
        assert!(label_sample(&inc, 16, t).is_err());
    }

    #[test]
    fn volatility_label_compares_windows() {
        // Alternating log increments of ±0.01 in the past window, ±0.02 after t.
        let h = 5;
        let t = 10;
        let mut log = vec![0.0f64];
        for k in 1..=t + h {
            let size = if k <= t { 0.01 } else { 0.02 };
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            log.push(log[k - 1] + sign * size);
        }
        let series: Vec<f64> = log.iter().map(|l| (l + 4.0).exp()).collect();
        let past = realized_volatility(&series, t - h, t);
        let future = realized_volatility(&series, t, t + h);
        assert!(future > past);
        let target = TargetSpec::new(Quantity::Volatility, h).unwrap();
        assert_eq!(label_sample(&series, t, target).unwrap(), Direction::Up);
        let flat = vec![1.0; 40];
        assert_eq!(label_sample(&flat, 20, target).unwrap(), Direction::Down);
    }

    #[test]
    fn moving_average_of_constant_is_constant() {
        assert_eq!(moving_average(&[2.0; 5], 3), vec![2.0; 5]);
        assert_eq!(moving_average(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
    }
}
