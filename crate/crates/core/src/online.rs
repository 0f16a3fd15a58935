//! Online batching policies, simulated exactly event by event.
//!
//! [`OnlineSimulator`] only ever sees arrivals that have already happened.
//! Between events the accumulated waiting time of pending samples grows
//! linearly with slope equal to the number of pending samples, so every
//! processing time is solved in closed form rather than by time stepping.

use std::fmt;
use std::str::FromStr;

use crate::cost::{CostFunction, FeatureId};
use crate::error::{Error, Result};
use crate::instance::{cost_of, Batch, ProblemInstance, Schedule, ScheduleCost};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyConfig {
    /// Process all pending samples once their accumulated waiting time
    /// reaches `alpha` times the cost of processing them together.
    WaitTillAlpha { alpha: f64 },
    /// Process every `k` consecutive arrivals together.
    FixedSize { k: usize },
    /// Process everything pending once the oldest pending sample has waited `delay`.
    FixedDelay { delay: f64 },
}

impl PolicyConfig {
    pub fn wta(alpha: f64) -> Result<Self> {
        let p = Self::WaitTillAlpha { alpha };
        p.validate()?;
        Ok(p)
    }

    /// WaitTillAlpha with `α = 1`.
    pub fn wte() -> Self {
        Self::WaitTillAlpha { alpha: 1.0 }
    }

    pub fn fixed_size(k: usize) -> Result<Self> {
        let p = Self::FixedSize { k };
        p.validate()?;
        Ok(p)
    }

    pub fn fixed_delay(delay: f64) -> Result<Self> {
        let p = Self::FixedDelay { delay };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::WaitTillAlpha { alpha } if !(alpha.is_finite() && alpha > 0.0) => Err(
                Error::InvalidArgument(format!("α must be positive and finite, got {alpha}")),
            ),
            Self::FixedSize { k: 0 } => {
                Err(Error::InvalidArgument("batch size k must be ≥ 1".into()))
            }
            Self::FixedDelay { delay } if !(delay.is_finite() && delay >= 0.0) => Err(
                Error::InvalidArgument(format!("delay must be non-negative, got {delay}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Self::WaitTillAlpha { alpha } => Some(alpha),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WaitTillAlpha { alpha } => write!(f, "wta:{alpha}"),
            Self::FixedSize { k } => write!(f, "fixed-size:{k}"),
            Self::FixedDelay { delay } => write!(f, "fixed-delay:{delay}"),
        }
    }
}

impl FromStr for PolicyConfig {
    type Err = Error;

    /// `wta:<alpha>`, `wte`, `fixed-size:<k>` or `fixed-delay:<d>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidPolicySpec(s.to_string());
        let parsed = match s.trim().split_once(':') {
            None if s.trim() == "wte" => return Ok(Self::wte()),
            None => return Err(bad()),
            Some(("wta", a)) => Self::WaitTillAlpha {
                alpha: a.trim().parse().map_err(|_| bad())?,
            },
            Some(("fixed-size", k)) => Self::FixedSize {
                k: k.trim().parse().map_err(|_| bad())?,
            },
            Some(("fixed-delay", d)) => Self::FixedDelay {
                delay: d.trim().parse().map_err(|_| bad())?,
            },
            Some(_) => return Err(bad()),
        };
        parsed.validate().map_err(|_| bad())?;
        Ok(parsed)
    }
}

/// `(1 + 1/α) · max{1, α/Γ}`, the worst-case ratio guaranteed for
/// WaitTillAlpha with parameter `alpha` on a cost function of curvature `gamma`.
pub fn competitive_ratio_bound(alpha: f64, gamma: f64) -> f64 {
    (1.0 + 1.0 / alpha) * (alpha / gamma).max(1.0)
}

/// Event-driven state of an online policy.
///
/// Feed arrivals in time order with [`arrive`](Self::arrive); processing
/// decisions strictly before each arrival are taken first, so a sample
/// arriving exactly at a candidate processing time joins that batch.
#[derive(Debug, Clone)]
pub struct OnlineSimulator<'f> {
    policy: PolicyConfig,
    f: &'f CostFunction,
    times: Vec<f64>,
    features: Vec<FeatureId>,
    first_pending: usize,
    now: f64,
    /// `∫ u dτ` since the last processing time.
    accrued: f64,
    pending_cost: f64,
    batches: Vec<Batch>,
}

impl<'f> OnlineSimulator<'f> {
    pub fn new(policy: PolicyConfig, f: &'f CostFunction) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            policy,
            f,
            times: Vec::new(),
            features: Vec::new(),
            first_pending: 0,
            now: 0.0,
            accrued: 0.0,
            pending_cost: 0.0,
            batches: Vec::new(),
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.times.len() - self.first_pending
    }

    pub fn accrued_wait(&self) -> f64 {
        self.accrued
    }

    /// `α f(pending)` for WaitTillAlpha, otherwise `None`.
    pub fn target(&self) -> Option<f64> {
        self.policy.alpha().map(|a| a * self.pending_cost)
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn arrivals(&self) -> &[f64] {
        &self.times
    }

    pub fn arrival_features(&self) -> &[FeatureId] {
        &self.features
    }

    /// Next processing decision `(time, count)` assuming no further arrivals;
    /// `count` samples from the front of the queue are processed.
    pub fn next_flush(&self) -> Option<(f64, usize)> {
        let pending = self.pending();
        if pending == 0 {
            return None;
        }
        match self.policy {
            PolicyConfig::WaitTillAlpha { alpha } => {
                let gap = alpha * self.pending_cost - self.accrued;
                let t = if gap > 0.0 {
                    self.now + gap / pending as f64
                } else {
                    self.now
                };
                Some((t, pending))
            }
            PolicyConfig::FixedSize { k } => (pending >= k).then_some((self.now, pending / k * k)),
            PolicyConfig::FixedDelay { delay } => {
                let due = self.times[self.first_pending] + delay;
                Some((due.max(self.now), pending))
            }
        }
    }

    /// Take every processing decision due strictly before `t`, then move the
    /// clock to `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if t < self.now {
            return Err(Error::InvalidArgument(format!(
                "cannot move clock back from {} to {t}",
                self.now
            )));
        }
        while let Some((ft, count)) = self.next_flush() {
            if ft >= t {
                break;
            }
            self.flush(ft, count)?;
        }
        self.accrue_to(t);
        Ok(())
    }

    /// Release simultaneous arrivals at time `t`.
    pub fn arrive(&mut self, t: f64, features: &[FeatureId]) -> Result<()> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidInstance(format!("bad arrival time {t}")));
        }
        self.advance_to(t)?;
        self.times.extend(std::iter::repeat_n(t, features.len()));
        self.features.extend_from_slice(features);
        self.refresh_pending_cost()
    }

    /// Take the next processing decision, if any.
    pub fn flush_next(&mut self) -> Result<Option<f64>> {
        match self.next_flush() {
            Some((ft, count)) => {
                self.flush(ft, count)?;
                Ok(Some(ft))
            }
            None => Ok(None),
        }
    }

    /// No more arrivals: run the policy until nothing is pending. A policy
    /// that would wait forever processes its remainder now.
    pub fn finish(mut self) -> Result<Schedule> {
        while self.pending() > 0 {
            if self.flush_next()?.is_none() {
                let now = self.now;
                let pending = self.pending();
                self.flush(now, pending)?;
            }
        }
        Ok(Schedule::new(self.batches))
    }

    fn accrue_to(&mut self, t: f64) {
        self.accrued += self.pending() as f64 * (t - self.now);
        self.now = t;
    }

    fn flush(&mut self, t: f64, count: usize) -> Result<()> {
        self.accrue_to(t);
        let range = self.first_pending..self.first_pending + count;
        match self.batches.last_mut() {
            Some(prev) if prev.time == t => prev.range.end = range.end,
            _ => self.batches.push(Batch::new(range, t)),
        }
        self.first_pending += count;
        self.accrued = 0.0;
        self.refresh_pending_cost()
    }

    fn refresh_pending_cost(&mut self) -> Result<()> {
        self.pending_cost = self
            .f
            .evaluate_slice(&self.features[self.first_pending..])?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub schedule: Schedule,
    pub cost: ScheduleCost,
}

/// Run `policy` over the arrivals of `inst`.
pub fn run_policy(
    inst: &ProblemInstance,
    f: &CostFunction,
    policy: PolicyConfig,
) -> Result<PolicyOutcome> {
    let mut sim = OnlineSimulator::new(policy, f)?;
    let times = inst.times();
    let mut start = 0;
    while start < times.len() {
        let t = times[start];
        let end = start + times[start..].partition_point(|&a| a == t);
        sim.arrive(t, &inst.features()[start..end])?;
        start = end;
    }
    let schedule = sim.finish()?;
    let cost = cost_of(inst, &schedule, f)?;
    Ok(PolicyOutcome { schedule, cost })
}

pub fn run_wta(inst: &ProblemInstance, f: &CostFunction, alpha: f64) -> Result<PolicyOutcome> {
    run_policy(inst, f, PolicyConfig::wta(alpha)?)
}

/// Every `k` consecutive arrivals at the `k`-th arrival; a final partial
/// batch at the last arrival.
pub fn run_fixed_size(inst: &ProblemInstance, f: &CostFunction, k: usize) -> Result<PolicyOutcome> {
    run_policy(inst, f, PolicyConfig::fixed_size(k)?)
}

pub fn run_fixed_delay(
    inst: &ProblemInstance,
    f: &CostFunction,
    delay: f64,
) -> Result<PolicyOutcome> {
    run_policy(inst, f, PolicyConfig::fixed_delay(delay)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::pending_count_curve;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    fn inst(times: &[f64]) -> ProblemInstance {
        ProblemInstance::from_times(times.to_vec()).unwrap()
    }

    #[test]
    fn wta_single_sample() {
        let out = run_wta(&inst(&[0.0]), &CostFunction::sqrt(), 0.5).unwrap();
        assert_eq!(out.schedule.batches(), &[Batch::new(0..1, 0.5)]);
        assert_eq!(
            (out.cost.wait, out.cost.processing, out.cost.total),
            (0.5, 1.0, 1.5)
        );
    }

    #[test]
    fn wta_absorbs_second_arrival() {
        let out = run_wta(&inst(&[0.0, 0.2]), &CostFunction::sqrt(), 0.5).unwrap();
        assert_eq!(out.schedule.len(), 1);
        let t = out.schedule.batches()[0].time;
        // hand simulation: 0.2 + (0.5·√2 − 0.2) / 2
        assert_relative_eq!(t, 0.2 + (0.5 * SQRT_2 - 0.2) / 2.0, max_relative = 1e-15);
        assert_relative_eq!(t, 0.453_553_390_593_273_8, max_relative = 1e-12);
        assert_relative_eq!(
            out.cost.total,
            1.060_660_171_779_821_2,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            out.cost.wait,
            0.5 * out.cost.processing,
            max_relative = 1e-12
        );
    }

    #[test]
    fn wta_trigger_tie_includes_arrival() {
        // alone, sample 0 would be processed at exactly t = 1
        let f = CostFunction::constant(1.0).unwrap();
        let out = run_wta(&inst(&[0.0, 1.0]), &f, 1.0).unwrap();
        assert_eq!(out.schedule.len(), 1);
        assert_eq!(out.schedule.batches()[0].range, 0..2);
        // accrued 1 already equals the unchanged target of 1
        assert_eq!(out.schedule.batches()[0].time, 1.0);
    }

    #[test]
    fn wta_zero_cost_processes_immediately() {
        let f = CostFunction::constant(0.0).unwrap();
        let out = run_wta(&inst(&[0.0, 0.5, 0.5, 2.0]), &f, 0.5).unwrap();
        assert_eq!(out.schedule.times(), vec![0.0, 0.5, 2.0]);
        assert_eq!(out.cost.total, 0.0);
    }

    #[test]
    fn wta_rejects_bad_alpha() {
        let p = inst(&[0.0]);
        for a in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(run_wta(&p, &CostFunction::sqrt(), a).is_err());
        }
    }

    #[test]
    fn wta_simultaneous_arrivals_and_per_batch_identity() {
        let p = inst(&[0.0, 0.0, 0.0, 0.3, 2.0, 2.0, 7.5]);
        let f = CostFunction::log1p();
        let alpha = 0.8;
        let out = run_wta(&p, &f, alpha).unwrap();
        let u = pending_count_curve(&p, &out.schedule);
        let mut prev = 0.0;
        for b in out.schedule.batches() {
            let area = u.integral_between(prev, b.time);
            let cost = f.count_cost(b.len()).unwrap();
            assert_relative_eq!(area, alpha * cost, max_relative = 1e-12);
            prev = b.time;
        }
        assert_relative_eq!(
            out.cost.wait,
            alpha * out.cost.processing,
            max_relative = 1e-12
        );
    }

    #[test]
    fn fixed_size_examples() {
        let p = inst(&[0.0, 1.0, 1.5, 4.0, 4.0]);
        let f = CostFunction::sqrt();
        let one = run_fixed_size(&p, &f, 1).unwrap();
        assert_eq!(one.schedule.times(), vec![0.0, 1.0, 1.5, 4.0]);
        assert_eq!(one.cost.wait, 0.0);

        let all = run_fixed_size(&p, &f, 5).unwrap();
        assert_eq!(all.schedule.batches(), &[Batch::new(0..5, 4.0)]);

        let two = run_fixed_size(&p, &f, 2).unwrap();
        assert_eq!(
            two.schedule.batches(),
            &[Batch::new(0..2, 1.0), Batch::new(2..5, 4.0)]
        );
        assert!(run_fixed_size(&p, &f, 0).is_err());
    }

    #[test]
    fn fixed_size_ratio_grows_like_sqrt_n() {
        let f = CostFunction::sqrt();
        let k = 4;
        for n in [4usize, 16, 64] {
            let times: Vec<f64> = (0..n * k).map(|i| i as f64 * 1e-9).collect();
            let p = inst(&times);
            let fs = run_fixed_size(&p, &f, k).unwrap();
            let opt = crate::offline::osp(&p, &f).unwrap();
            assert_relative_eq!(
                fs.cost.total / opt.cost.total,
                (n as f64).sqrt(),
                max_relative = 1e-4
            );
        }
    }

    #[test]
    fn fixed_delay_examples() {
        let f = CostFunction::sqrt();
        let out = run_fixed_delay(&inst(&[0.0, 1.0, 3.0]), &f, 0.0).unwrap();
        assert_eq!(out.schedule.times(), vec![0.0, 1.0, 3.0]);

        let out = run_fixed_delay(&inst(&[0.0, 0.0, 0.0]), &f, 0.0).unwrap();
        assert_eq!(out.schedule.batches(), &[Batch::new(0..3, 0.0)]);

        let out = run_fixed_delay(&inst(&[0.0, 0.5]), &f, 1.0).unwrap();
        assert_eq!(out.schedule.batches(), &[Batch::new(0..2, 1.0)]);

        let out = run_fixed_delay(&inst(&[0.0, 0.5, 1.2, 1.4]), &f, 1.0).unwrap();
        assert_eq!(
            out.schedule.batches(),
            &[Batch::new(0..2, 1.0), Batch::new(2..4, 2.2)]
        );
    }

    #[test]
    fn ratio_bound_corollaries() {
        for g in [0.5, 0.6, FRAC_1_SQRT_2, 0.9, 1.0] {
            assert_relative_eq!(competitive_ratio_bound(0.5, g), 3.0, max_relative = 1e-15);
            assert_relative_eq!(
                competitive_ratio_bound(g, g),
                1.0 + 1.0 / g,
                max_relative = 1e-15
            );
            assert_relative_eq!(
                competitive_ratio_bound(1.0, g),
                2.0 / g,
                max_relative = 1e-15
            );
        }
        assert_eq!(competitive_ratio_bound(1.0, 0.5), 4.0);
        assert_relative_eq!(
            competitive_ratio_bound(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            1.0 + SQRT_2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn policy_specs() {
        assert_eq!(
            "wta:0.5".parse::<PolicyConfig>().unwrap(),
            PolicyConfig::WaitTillAlpha { alpha: 0.5 }
        );
        assert_eq!("wte".parse::<PolicyConfig>().unwrap(), PolicyConfig::wte());
        assert_eq!(
            "fixed-size:4".parse::<PolicyConfig>().unwrap(),
            PolicyConfig::FixedSize { k: 4 }
        );
        assert_eq!(
            "fixed-delay:0.25".parse::<PolicyConfig>().unwrap(),
            PolicyConfig::FixedDelay { delay: 0.25 }
        );
        for bad in [
            "wta",
            "wta:0",
            "wta:-1",
            "fixed-size:0",
            "fixed-size:1.5",
            "fixed-delay:-2",
            "greedy",
            "",
        ] {
            assert!(
                matches!(
                    bad.parse::<PolicyConfig>(),
                    Err(Error::InvalidPolicySpec(_))
                ),
                "{bad}"
            );
        }
        for p in [
            PolicyConfig::wte(),
            PolicyConfig::FixedSize { k: 3 },
            PolicyConfig::FixedDelay { delay: 1.5 },
        ] {
            assert_eq!(p.to_string().parse::<PolicyConfig>().unwrap(), p);
        }
    }

    #[test]
    fn simulator_state_invariants() {
        let f = CostFunction::sqrt();
        let mut sim = OnlineSimulator::new(PolicyConfig::wte(), &f).unwrap();
        assert_eq!(sim.accrued_wait(), 0.0);
        sim.arrive(1.0, &[FeatureId(0)]).unwrap();
        sim.advance_to(1.5).unwrap();
        assert_eq!(sim.accrued_wait(), 0.5);
        assert!(sim.accrued_wait() <= sim.target().unwrap());
        sim.advance_to(3.0).unwrap();
        // processed at 2.0, nothing pending, nothing accrued
        assert_eq!(sim.pending(), 0);
        assert_eq!(sim.accrued_wait(), 0.0);
        assert_eq!(sim.batches(), &[Batch::new(0..1, 2.0)]);
        assert!(sim.advance_to(1.0).is_err());
    }
}
