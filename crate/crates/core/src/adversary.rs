//! Adaptive lower-bound construction against deterministic online policies.
//!
//! Two groups of samples `x1` and `x2` are released alternately. Each wave
//! arrives `ε` after the policy has processed everything released so far, for
//! `2s` waves. Two benchmark schedules bracket the offline optimum on the
//! resulting instance:
//!
//! * *odd*: process at each odd-numbered wave arrival (waves `2k, 2k+1`
//!   together), the first wave alone, and the last wave at `t_{2s} + ε`;
//! * *even*: process waves `2k-1, 2k` together when wave `2k` arrives.

use crate::cost::{CostFunction, CostKind, FeatureId, FeatureMultiset};
use crate::error::{Error, Result};
use crate::instance::{cost_of, Batch, ProblemInstance, Schedule, ScheduleCost};
use crate::offline::osp;
use crate::online::{run_policy, OnlineSimulator, PolicyConfig};

/// Gap between a processing decision and the next wave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Absolute(f64),
    /// A multiple of the time the policy takes to process `x1` released alone.
    RelativeToFirstGap(f64),
}

impl Default for Epsilon {
    fn default() -> Self {
        Self::RelativeToFirstGap(1e-6)
    }
}

#[derive(Debug, Clone)]
pub struct AdversaryConfig {
    pub x1: FeatureMultiset,
    pub x2: FeatureMultiset,
    pub rounds: usize,
    pub epsilon: Epsilon,
    /// Give up if the policy has not processed a wave by this time.
    pub horizon: f64,
}

impl AdversaryConfig {
    pub fn new(x1: FeatureMultiset, x2: FeatureMultiset, rounds: usize) -> Self {
        Self {
            x1,
            x2,
            rounds,
            epsilon: Epsilon::default(),
            horizon: 1e12,
        }
    }

    pub fn with_epsilon(mut self, epsilon: Epsilon) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    fn validate(&self, f: &CostFunction) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be ≥ 1".into()));
        }
        if self.x1.is_empty() || self.x2.is_empty() {
            return Err(Error::InvalidArgument("x1 and x2 must be non-empty".into()));
        }
        let e = match self.epsilon {
            Epsilon::Absolute(e) | Epsilon::RelativeToFirstGap(e) => e,
        };
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ε must be positive, got {e}"
            )));
        }
        if self.horizon.is_nan() || self.horizon <= 0.0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if f.evaluate(&self.x1)? == 0.0 && f.evaluate(&self.x2)? == 0.0 {
            return Err(Error::InvalidArgument(
                "f(x1) and f(x2) are both zero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdversaryReport {
    pub instance: ProblemInstance,
    pub alg_schedule: Schedule,
    pub alg_cost: ScheduleCost,
    /// Unnormalized (summed over samples) cost of the odd schedule.
    pub odd_cost: f64,
    /// Unnormalized cost of the even schedule.
    pub even_cost: f64,
    /// `(odd_cost + even_cost) / (2n)`.
    pub opt_upper: f64,
    pub opt_exact: f64,
    pub ratio_vs_avg: f64,
    pub ratio_vs_exact: f64,
    /// `(f(x1) + f(x2)) / f(x1 ∪ x2)`, the bound as `s → ∞`, `ε → 0`.
    pub limit_bound: f64,
    /// `2(f(x1)+f(x2)) / (2f(x1∪x2) + (f(x1)+f(x2)−f(x1∪x2))/s)`, valid at `ε = 0`.
    pub finite_round_bound: f64,
    /// Amount by which `ε > 0` can lower `ratio_vs_avg` below
    /// `min(2, finite_round_bound)`.
    pub epsilon_correction: f64,
    pub epsilon: f64,
    /// `t_j`: time the last sample of wave `j` was processed, `j = 1..=2s`.
    pub wave_times: Vec<f64>,
    /// Some wave was processed in more than one batch.
    pub wave_split: bool,
    /// Re-running the policy on the realized instance reproduced its decisions.
    pub replay_matches: bool,
}

impl AdversaryReport {
    /// The lower bound `ratio_vs_avg` must satisfy whatever the policy did.
    pub fn guaranteed_ratio(&self) -> f64 {
        (self.finite_round_bound - self.epsilon_correction).min(2.0)
    }
}

fn expand(x: &FeatureMultiset) -> Vec<FeatureId> {
    x.iter()
        .flat_map(|(id, c)| std::iter::repeat_n(id, c as usize))
        .collect()
}

/// Run the policy until nothing is pending.
fn drain(sim: &mut OnlineSimulator<'_>, horizon: f64) -> Result<()> {
    while sim.pending() > 0 {
        match sim.next_flush() {
            Some((t, _)) if t <= horizon => {
                sim.flush_next()?;
            }
            _ => return Err(Error::NonTerminatingPolicy { horizon }),
        }
    }
    Ok(())
}

fn resolve_epsilon(policy: PolicyConfig, f: &CostFunction, cfg: &AdversaryConfig) -> Result<f64> {
    match cfg.epsilon {
        Epsilon::Absolute(e) => Ok(e),
        Epsilon::RelativeToFirstGap(factor) => {
            let mut probe = OnlineSimulator::new(policy, f)?;
            probe.arrive(0.0, &expand(&cfg.x1))?;
            drain(&mut probe, cfg.horizon)?;
            let gap = probe.now();
            Ok(if gap > 0.0 { factor * gap } else { factor })
        }
    }
}

pub fn run_adversary(
    policy: PolicyConfig,
    f: &CostFunction,
    cfg: &AdversaryConfig,
) -> Result<AdversaryReport> {
    cfg.validate(f)?;
    let eps = resolve_epsilon(policy, f, cfg)?;
    let waves = [expand(&cfg.x1), expand(&cfg.x2)];

    let mut sim = OnlineSimulator::new(policy, f)?;
    let mut wave_times = Vec::with_capacity(2 * cfg.rounds);
    let mut wave_starts = Vec::with_capacity(2 * cfg.rounds + 1);
    let mut wave_split = false;
    let mut prev = 0.0;
    for j in 0..2 * cfg.rounds {
        let batches_before = sim.batches().len();
        wave_starts.push(sim.arrivals().len());
        sim.arrive(prev + eps, &waves[j % 2])?;
        drain(&mut sim, cfg.horizon)?;
        wave_split |= sim.batches().len() - batches_before > 1;
        prev = sim.now();
        wave_times.push(prev);
    }
    wave_starts.push(sim.arrivals().len());

    let instance = ProblemInstance::new(sim.arrivals().to_vec(), sim.arrival_features().to_vec())?;
    let alg_schedule = Schedule::new(sim.batches().to_vec());
    let alg_cost = cost_of(&instance, &alg_schedule, f)?;
    let replay_matches = run_policy(&instance, f, policy)?.schedule == alg_schedule;

    let n = instance.len();
    let s = cfg.rounds;
    let arrival = |j: usize| instance.time(wave_starts[j]);

    let mut odd = vec![Batch::new(0..wave_starts[1], arrival(0))];
    for k in 1..s {
        odd.push(Batch::new(
            wave_starts[2 * k - 1]..wave_starts[2 * k + 1],
            arrival(2 * k),
        ));
    }
    odd.push(Batch::new(
        wave_starts[2 * s - 1]..n,
        wave_times[2 * s - 1] + eps,
    ));
    let odd_cost = cost_of(&instance, &Schedule::new(odd), f)?.total * n as f64;

    let even: Vec<Batch> = (0..s)
        .map(|k| {
            Batch::new(
                wave_starts[2 * k]..wave_starts[2 * k + 2],
                arrival(2 * k + 1),
            )
        })
        .collect();
    let even_cost = cost_of(&instance, &Schedule::new(even), f)?.total * n as f64;

    let opt_upper = (odd_cost + even_cost) / (2.0 * n as f64);
    let opt_exact = osp(&instance, f)?.cost.total;

    let f1 = f.evaluate(&cfg.x1)?;
    let f2 = f.evaluate(&cfg.x2)?;
    let f12 = f.evaluate(&cfg.x1.union(&cfg.x2))?;
    let limit_bound = (f1 + f2) / f12;
    let s_f = s as f64;
    let finite_round_bound = 2.0 * (f1 + f2) / (2.0 * f12 + (f1 + f2 - f12) / s_f);
    // Both benchmark schedules together wait exactly n·ε longer than the
    // policy does; only that excess is not covered by the ε = 0 bound.
    let base = f1 + f2 + (2.0 * s_f - 1.0) * f12;
    let slack = n as f64 * eps;
    let epsilon_correction = finite_round_bound * slack / (base + slack);

    Ok(AdversaryReport {
        ratio_vs_avg: alg_cost.total / opt_upper,
        ratio_vs_exact: alg_cost.total / opt_exact,
        instance,
        alg_schedule,
        alg_cost,
        odd_cost,
        even_cost,
        opt_upper,
        opt_exact,
        limit_bound,
        finite_round_bound,
        epsilon_correction,
        epsilon: eps,
        wave_times,
        wave_split,
        replay_matches,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstPair {
    pub x1: FeatureMultiset,
    pub x2: FeatureMultiset,
    pub limit_bound: f64,
}

/// Most multisets enumerated for a set function before giving up.
pub const WORST_PAIR_MAX_MULTISETS: usize = 4096;

const TIE_TOL: f64 = 1e-12;

/// The pair maximizing `(f(x1) + f(x2)) / f(x1 ∪ x2)` with `|x1| + |x2| ≤ max_size`.
///
/// Ties within 1e-12 relative keep the smaller total size, then the smaller `|x1|`.
pub fn worst_pair_search(f: &CostFunction, max_size: usize) -> Result<WorstPair> {
    if max_size < 2 {
        return Err(Error::InvalidArgument("max_size must be ≥ 2".into()));
    }
    let mut best: Option<(f64, FeatureMultiset, FeatureMultiset)> = None;
    let mut consider = |r: f64, x: &FeatureMultiset, y: &FeatureMultiset| {
        if !r.is_finite() {
            return;
        }
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| r > b * (1.0 + TIE_TOL))
        {
            best = Some((r, x.clone(), y.clone()));
        }
    };

    if let CostKind::SetFunction { universe, .. } = f.kind() {
        let sets = multisets_up_to(*universe, max_size - 1)?;
        let costs = sets
            .iter()
            .map(|x| f.evaluate(x))
            .collect::<Result<Vec<_>>>()?;
        // `sets` is ordered by size, so scanning by total size keeps the tie rule.
        for total in 2..=max_size {
            for (i, x) in sets.iter().enumerate() {
                for (j, y) in sets.iter().enumerate().skip(i) {
                    if x.len() + y.len() != total {
                        continue;
                    }
                    let u = f.evaluate(&x.union(y))?;
                    if u > 0.0 {
                        consider((costs[i] + costs[j]) / u, x, y);
                    }
                }
            }
        }
    } else {
        for total in 2..=max_size {
            for a in 1..=total / 2 {
                let u = f.count_cost(total)?;
                if u > 0.0 {
                    let r = (f.count_cost(a)? + f.count_cost(total - a)?) / u;
                    let id = FeatureId(0);
                    consider(
                        r,
                        &FeatureMultiset::repeated(id, a as u32),
                        &FeatureMultiset::repeated(id, (total - a) as u32),
                    );
                }
            }
        }
    }

    best.map(|(limit_bound, x1, x2)| WorstPair {
        x1,
        x2,
        limit_bound,
    })
    .ok_or_else(|| Error::GammaUndefined("f vanishes on every pair within the cap".into()))
}

/// All non-empty multisets over `universe` features with size ≤ `max`, by size.
fn multisets_up_to(universe: usize, max: usize) -> Result<Vec<FeatureMultiset>> {
    let too_many = || {
        Error::InvalidArgument(format!(
            "more than {WORST_PAIR_MAX_MULTISETS} multisets over {universe} features up to size {max}"
        ))
    };
    let mut layers: Vec<Vec<(FeatureMultiset, u32)>> = vec![vec![(FeatureMultiset::new(), 0)]];
    let mut out = Vec::new();
    for _ in 0..max {
        let mut next = Vec::new();
        for (x, min_id) in layers.last().unwrap() {
            // non-decreasing feature ids give each multiset exactly once
            for id in *min_id..universe as u32 {
                let mut y = x.clone();
                y.insert(FeatureId(id));
                next.push((y, id));
                if out.len() + next.len() > WORST_PAIR_MAX_MULTISETS {
                    return Err(too_many());
                }
            }
        }
        out.extend(next.iter().map(|(x, _)| x.clone()));
        layers.push(next);
    }
    Ok(out)
}
