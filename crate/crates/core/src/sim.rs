//! Poisson arrival generation and the seeded Monte-Carlo study runner.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::cost::{gamma, CostFunction, FeatureId};
use crate::error::{Error, Result};
use crate::instance::ProblemInstance;
use crate::offline::osp;
use crate::online::{run_policy, PolicyConfig};

/// Arrival intensity `λ(t)` in events per second.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFunction {
    Constant(f64),
    /// `base + amplitude · sin(2πt / period)`.
    Sinusoid {
        base: f64,
        amplitude: f64,
        period: f64,
    },
    /// `rates[i]` on `[starts[i], starts[i+1])`; the last rate holds forever.
    Table {
        starts: Vec<f64>,
        rates: Vec<f64>,
    },
}

impl RateFunction {
    pub fn constant(rate: f64) -> Result<Self> {
        let r = Self::Constant(rate);
        r.validate()?;
        Ok(r)
    }

    pub fn sinusoid(base: f64, amplitude: f64, period: f64) -> Result<Self> {
        let r = Self::Sinusoid {
            base,
            amplitude,
            period,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn table(starts: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        let r = Self::Table { starts, rates };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            Self::Constant(r) if !(r.is_finite() && *r >= 0.0) => {
                bad(format!("rate {r} must be non-negative"))
            }
            Self::Sinusoid {
                base,
                amplitude,
                period,
            } => {
                if !(base.is_finite() && amplitude.is_finite() && *base >= amplitude.abs()) {
                    return bad(format!(
                        "sinusoid needs base ≥ |amplitude|, got {base}, {amplitude}"
                    ));
                }
                if !(period.is_finite() && *period > 0.0) {
                    return bad(format!("period {period} must be positive"));
                }
                Ok(())
            }
            Self::Table { starts, rates } => {
                if starts.is_empty() || starts.len() != rates.len() || starts[0] != 0.0 {
                    return bad("rate table needs matching non-empty columns starting at 0".into());
                }
                if starts.windows(2).any(|w| w[0] >= w[1]) || !starts.iter().all(|s| s.is_finite())
                {
                    return bad("rate table start times must be strictly increasing".into());
                }
                if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return bad("rate table entries must be non-negative".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            Self::Constant(r) => *r,
            Self::Sinusoid {
                base,
                amplitude,
                period,
            } => base + amplitude * (TAU * t / period).sin(),
            Self::Table { starts, rates } => {
                rates[starts.partition_point(|&s| s <= t).saturating_sub(1)]
            }
        }
    }

    /// Exact supremum of `λ(t)`.
    pub fn max_rate(&self) -> f64 {
        match self {
            Self::Constant(r) => *r,
            Self::Sinusoid {
                base, amplitude, ..
            } => base + amplitude.abs(),
            Self::Table { rates, .. } => rates.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Whether arrivals keep coming forever, i.e. fixed-count generation ends.
    fn eventually_positive(&self) -> bool {
        match self {
            Self::Constant(r) => *r > 0.0,
            Self::Sinusoid { base, .. } => *base > 0.0,
            Self::Table { rates, .. } => rates.last().is_some_and(|&r| r > 0.0),
        }
    }
}

impl fmt::Display for RateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(r) => write!(f, "{r}"),
            Self::Sinusoid {
                base,
                amplitude,
                period,
            } => write!(f, "sin:{base},{amplitude},{period}"),
            Self::Table { starts, rates } => {
                let cells: Vec<String> = starts
                    .iter()
                    .zip(rates)
                    .map(|(s, r)| format!("{s}={r}"))
                    .collect();
                write!(f, "table:{}", cells.join(","))
            }
        }
    }
}

impl FromStr for RateFunction {
    type Err = Error;

    /// `<rate>`, `sin:<base>,<amp>,<period>` or `table:<start>=<rate>,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidRateSpec(s.to_string());
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
        let s = s.trim();
        let parsed = if let Some(rest) = s.strip_prefix("sin:") {
            let v: Vec<f64> = rest.split(',').map(num).collect::<Result<_>>()?;
            let [base, amplitude, period] = v[..] else {
                return Err(bad());
            };
            Self::Sinusoid {
                base,
                amplitude,
                period,
            }
        } else if let Some(rest) = s.strip_prefix("table:") {
            let mut starts = Vec::new();
            let mut rates = Vec::new();
            for cell in rest.split(',') {
                let (t, r) = cell.split_once('=').ok_or_else(bad)?;
                starts.push(num(t)?);
                rates.push(num(r)?);
            }
            Self::Table { starts, rates }
        } else {
            Self::Constant(num(s)?)
        };
        parsed.validate().map_err(|_| bad())?;
        Ok(parsed)
    }
}

/// Next arrival after `t`: exponential gaps at rate `λ_max`, each kept with
/// probability `λ(t)/λ_max`.
fn next_arrival<R: Rng>(rate: &RateFunction, t: f64, rng: &mut R, exp: &Exp<f64>) -> f64 {
    let lmax = rate.max_rate();
    let mut t = t;
    loop {
        t += exp.sample(rng);
        if let RateFunction::Constant(_) = rate {
            return t;
        }
        if rng.random::<f64>() * lmax < rate.rate_at(t) {
            return t;
        }
    }
}

fn check_rate(rate: &RateFunction) -> Result<Exp<f64>> {
    rate.validate()?;
    if !rate.eventually_positive() {
        return Err(Error::ZeroRate);
    }
    Exp::new(rate.max_rate()).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// `n` arrivals from a Poisson process with intensity `rate`, all with feature 0.
pub fn gen_poisson(rate: &RateFunction, n: usize, seed: u64) -> Result<ProblemInstance> {
    gen_poisson_with_features(rate, n, seed, |_| FeatureId(0))
}

/// Like [`gen_poisson`], drawing each sample's feature from `sampler`.
pub fn gen_poisson_with_features<F>(
    rate: &RateFunction,
    n: usize,
    seed: u64,
    mut sampler: F,
) -> Result<ProblemInstance>
where
    F: FnMut(&mut ChaCha8Rng) -> FeatureId,
{
    if n == 0 {
        return Err(Error::EmptyInstance);
    }
    let exp = check_rate(rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut t = 0.0;
    for _ in 0..n {
        t = next_arrival(rate, t, &mut rng, &exp);
        times.push(t);
        features.push(sampler(&mut rng));
    }
    ProblemInstance::new(times, features)
}

/// All arrivals in `[0, horizon)`; an empty window is an error.
pub fn gen_poisson_horizon(
    rate: &RateFunction,
    horizon: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    let exp = check_rate(rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::new();
    let mut t = next_arrival(rate, 0.0, &mut rng, &exp);
    while t < horizon {
        times.push(t);
        t = next_arrival(rate, t, &mut rng, &exp);
    }
    ProblemInstance::from_times(times)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub rate: RateFunction,
    pub n: usize,
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rate={} n={}", self.rate, self.n)
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub points: Vec<GridPoint>,
    pub policies: Vec<PolicyConfig>,
    pub cost: CostFunction,
    pub trials: u64,
    pub seed: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub parallelism: usize,
}

/// WaitTillAlpha with `α = Γ` of `f`, the default study policy.
pub fn default_wta(f: &CostFunction) -> Result<PolicyConfig> {
    PolicyConfig::wta(gamma(f, 64)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub j: f64,
    pub w: f64,
    pub f: f64,
    pub j_opt: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub n: usize,
    pub policy: String,
    pub alpha: Option<f64>,
    /// `Err` holds the failure message for a trial that could not complete.
    pub outcome: std::result::Result<TrialMetrics, String>,
}

impl TrialRecord {
    pub fn metrics(&self) -> Option<&TrialMetrics> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResults {
    pub point: GridPoint,
    /// Trial-major, then policies in configuration order.
    pub records: Vec<TrialRecord>,
}

impl PointResults {
    pub fn for_policy(&self, policy: &PolicyConfig) -> Vec<TrialRecord> {
        let label = policy.to_string();
        self.records
            .iter()
            .filter(|r| r.policy == label)
            .cloned()
            .collect()
    }
}

/// Seed of trial `trial` at grid point `point`: the first output of the
/// master generator's stream number `(point << 32) | trial`.
pub fn trial_seed(master: u64, point: usize, trial: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((point as u64) << 32) | trial);
    rng.next_u64()
}

fn run_trial(cfg: &StudyConfig, point_idx: usize, trial: u64) -> Vec<TrialRecord> {
    let point = &cfg.points[point_idx];
    let seed = trial_seed(cfg.seed, point_idx, trial);
    let record = |policy: &PolicyConfig, outcome| TrialRecord {
        trial,
        seed,
        n: point.n,
        policy: policy.to_string(),
        alpha: policy.alpha(),
        outcome,
    };
    let setup = gen_poisson(&point.rate, point.n, seed)
        .and_then(|inst| osp(&inst, &cfg.cost).map(|opt| (inst, opt.cost.total)));
    let (inst, j_opt) = match setup {
        Ok(v) => v,
        Err(e) => {
            log::error!("trial {trial} at {point}: {e}");
            return cfg
                .policies
                .iter()
                .map(|p| record(p, Err(e.to_string())))
                .collect();
        }
    };
    cfg.policies
        .iter()
        .map(|p| {
            let outcome = run_policy(&inst, &cfg.cost, *p)
                .map(|out| TrialMetrics {
                    j: out.cost.total,
                    w: out.cost.wait,
                    f: out.cost.processing,
                    j_opt,
                    ratio: out.cost.total / j_opt,
                })
                .map_err(|e| {
                    log::error!("trial {trial} at {point}, policy {p}: {e}");
                    e.to_string()
                });
            record(p, outcome)
        })
        .collect()
}

/// Run every policy on `trials` generated instances per grid point.
///
/// Results are identical for any `parallelism`: each trial draws from its own
/// seed and results are gathered in grid-then-trial order.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<PointResults>> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be ≥ 1".into()));
    }
    if cfg.policies.is_empty() {
        return Err(Error::InvalidArgument("no policies given".into()));
    }
    for p in &cfg.points {
        check_rate(&p.rate)?;
        if p.n == 0 {
            return Err(Error::EmptyInstance);
        }
    }
    let body = || {
        cfg.points
            .iter()
            .enumerate()
            .map(|(idx, point)| {
                log::info!("{point}: {} trials", cfg.trials);
                let records = (0..cfg.trials)
                    .into_par_iter()
                    .flat_map_iter(|trial| run_trial(cfg, idx, trial))
                    .collect();
                PointResults {
                    point: point.clone(),
                    records,
                }
            })
            .collect()
    };
    if cfg.parallelism == 0 {
        return Ok(body());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(body))
}

/// Distribution of competitive ratios over successful records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSummary {
    pub count: usize,
    pub errors: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl RatioSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Quantile `p` of sorted `xs` by linear interpolation between order
/// statistics at position `p·(len−1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(records: &[TrialRecord]) -> Result<RatioSummary> {
    let mut ratios: Vec<f64> = records
        .iter()
        .filter_map(|r| r.metrics().map(|m| m.ratio))
        .collect();
    if ratios.is_empty() {
        return Err(Error::EmptyRecords);
    }
    ratios.sort_by(f64::total_cmp);
    Ok(RatioSummary {
        count: ratios.len(),
        errors: records.len() - ratios.len(),
        min: ratios[0],
        q1: quantile(&ratios, 0.25),
        median: quantile(&ratios, 0.5),
        q3: quantile(&ratios, 0.75),
        max: ratios[ratios.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rate2() -> RateFunction {
        RateFunction::constant(2.0).unwrap()
    }

    #[test]
    fn poisson_basics() {
        let inst = gen_poisson(&rate2(), 4, 7).unwrap();
        assert_eq!(inst.len(), 4);
        assert!(inst.times().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(inst, gen_poisson(&rate2(), 4, 7).unwrap());
        assert_ne!(inst, gen_poisson(&rate2(), 4, 8).unwrap());
        let one = gen_poisson(&rate2(), 1, 1).unwrap();
        assert!(one.time(0) > 0.0);
    }

    #[test]
    fn mean_gap_matches_rate() {
        let n = 1_000_000;
        let inst = gen_poisson(&rate2(), n, 11).unwrap();
        let mean = inst.last_time() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn gaps_pass_kolmogorov_smirnov() {
        let n = 100_000;
        let lambda = 2.0;
        let inst = gen_poisson(&RateFunction::constant(lambda).unwrap(), n, 3).unwrap();
        let mut gaps: Vec<f64> = std::iter::once(inst.time(0))
            .chain(inst.times().windows(2).map(|w| w[1] - w[0]))
            .collect();
        gaps.sort_by(f64::total_cmp);
        let d = gaps
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-lambda * x).exp();
                (cdf - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - cdf)
            })
            .fold(0.0, f64::max);
        // asymptotic 1% critical value
        assert!(d < 1.628 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn sinusoid_average_rate() {
        let rate = RateFunction::sinusoid(2.0, 1.0, 3.0).unwrap();
        let periods = 20_000.0;
        let inst = gen_poisson_horizon(&rate, 3.0 * periods, 5).unwrap();
        let empirical = inst.len() as f64 / (3.0 * periods);
        assert!((empirical - 2.0).abs() < 0.04, "{empirical}");
    }

    #[test]
    fn table_rate_lookup() {
        let r = RateFunction::table(vec![0.0, 10.0], vec![1.0, 4.0]).unwrap();
        assert_eq!(
            (
                r.rate_at(0.0),
                r.rate_at(9.9),
                r.rate_at(10.0),
                r.rate_at(1e6)
            ),
            (1.0, 1.0, 4.0, 4.0)
        );
        assert_eq!(r.max_rate(), 4.0);
        let inst = gen_poisson_horizon(&r, 1010.0, 2).unwrap();
        let late = inst.times().iter().filter(|&&t| t >= 10.0).count() as f64 / 1000.0;
        assert!((late - 4.0).abs() < 0.3, "{late}");
    }

    #[test]
    fn zero_rates_rejected() {
        assert!(matches!(
            gen_poisson(&RateFunction::Constant(0.0), 3, 1),
            Err(Error::ZeroRate)
        ));
        let s = RateFunction::sinusoid(0.0, 0.0, 1.0).unwrap();
        assert!(matches!(gen_poisson(&s, 3, 1), Err(Error::ZeroRate)));
        let t = RateFunction::table(vec![0.0, 5.0], vec![3.0, 0.0]).unwrap();
        assert!(matches!(gen_poisson(&t, 3, 1), Err(Error::ZeroRate)));
        assert!(RateFunction::sinusoid(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn rate_specs() {
        assert_eq!(
            "2".parse::<RateFunction>().unwrap(),
            RateFunction::Constant(2.0)
        );
        assert_eq!(
            "sin:2,1,3".parse::<RateFunction>().unwrap(),
            RateFunction::Sinusoid {
                base: 2.0,
                amplitude: 1.0,
                period: 3.0
            }
        );
        let t: RateFunction = "table:0=1,10=4".parse().unwrap();
        assert_eq!(t.to_string().parse::<RateFunction>().unwrap(), t);
        for bad in ["", "x", "sin:1,2", "sin:1,2,3", "table:1=2", "-1"] {
            assert!(
                matches!(bad.parse::<RateFunction>(), Err(Error::InvalidRateSpec(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn features_from_sampler() {
        let inst =
            gen_poisson_with_features(&rate2(), 50, 9, |rng| FeatureId(rng.random_range(0..3)))
                .unwrap();
        assert!(inst.features().iter().all(|f| f.0 < 3));
        assert!(inst.universe_size() > 1);
    }

    fn small_study(parallelism: usize) -> StudyConfig {
        StudyConfig {
            points: vec![
                GridPoint {
                    rate: rate2(),
                    n: 12,
                },
                GridPoint {
                    rate: RateFunction::sinusoid(2.0, 1.0, 3.0).unwrap(),
                    n: 9,
                },
            ],
            policies: vec![
                PolicyConfig::wta(0.5).unwrap(),
                PolicyConfig::wte(),
                PolicyConfig::FixedSize { k: 3 },
            ],
            cost: CostFunction::sqrt(),
            trials: 40,
            seed: 2024,
            parallelism,
        }
    }

    #[test]
    fn study_reproducible_across_parallelism() {
        let a = run_study(&small_study(1)).unwrap();
        let b = run_study(&small_study(4)).unwrap();
        let c = run_study(&small_study(0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].records.len(), 40 * 3);
    }

    #[test]
    fn study_ratios_at_least_one() {
        for point in run_study(&small_study(2)).unwrap() {
            for r in &point.records {
                let m = r.metrics().unwrap();
                assert!(m.ratio >= 1.0 - 1e-9, "{r:?}");
                assert_relative_eq!(m.j, m.w + m.f, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn trial_seeds_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..3)
            .flat_map(|p| (0..100).map(move |t| trial_seed(1, p, t)))
            .collect();
        assert_eq!(seeds.len(), 300);
    }

    #[test]
    fn failed_trials_become_error_rows() {
        // table cost too short for n = 12
        let mut cfg = small_study(1);
        cfg.cost = CostFunction::count_table(vec![0.0, 1.0, 1.5]).unwrap();
        cfg.points.truncate(1);
        cfg.trials = 2;
        let res = run_study(&cfg).unwrap();
        assert!(res[0].records.iter().all(|r| r.outcome.is_err()));
        assert!(matches!(
            summarize(&res[0].records),
            Err(Error::EmptyRecords)
        ));
    }

    #[test]
    fn default_policy_uses_gamma() {
        assert_eq!(
            default_wta(&CostFunction::sqrt()).unwrap().alpha(),
            Some(std::f64::consts::FRAC_1_SQRT_2)
        );
    }

    fn rec(ratio: f64) -> TrialRecord {
        TrialRecord {
            trial: 0,
            seed: 0,
            n: 1,
            policy: "wte".into(),
            alpha: Some(1.0),
            outcome: Ok(TrialMetrics {
                j: ratio,
                w: 0.0,
                f: ratio,
                j_opt: 1.0,
                ratio,
            }),
        }
    }

    #[test]
    fn summary_quantiles() {
        let one = summarize(&[rec(1.3)]).unwrap();
        assert_eq!((one.min, one.median, one.max), (1.3, 1.3, 1.3));
        assert_eq!(summarize(&[rec(1.0), rec(2.0)]).unwrap().median, 1.5);
        let s = summarize(&[rec(4.0), rec(1.0), rec(3.0), rec(2.0), rec(5.0)]).unwrap();
        assert_eq!(
            (s.min, s.q1, s.median, s.q3, s.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        assert_eq!(s.iqr(), 2.0);
        assert!(matches!(summarize(&[]), Err(Error::EmptyRecords)));
    }

    #[test]
    fn summary_per_grid_point() {
        let res = run_study(&small_study(2)).unwrap();
        let p = PolicyConfig::wte();
        let rows: Vec<RatioSummary> = res
            .iter()
            .map(|pt| summarize(&pt.for_policy(&p)).unwrap())
            .collect();
        assert_eq!(rows.len(), res.len());
        assert!(rows.iter().all(|s| s.count == 40));
    }
}
