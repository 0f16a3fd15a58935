//! Problem instances, schedules and the waiting-plus-processing objective.

use std::ops::Range;

use crate::cost::{CostFunction, FeatureId};
use crate::error::{Error, Result};

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Arrival times `a_0 ≤ a_1 ≤ … ≤ a_{n-1}` (seconds) with one feature per
/// sample. Always non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    times: Vec<f64>,
    features: Vec<FeatureId>,
}

impl ProblemInstance {
    pub fn new(times: Vec<f64>, features: Vec<FeatureId>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyInstance);
        }
        if times.len() != features.len() {
            return Err(Error::InvalidInstance(format!(
                "{} times but {} features",
                times.len(),
                features.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidInstance(format!(
                "arrival {i} has time {}, expected a finite non-negative value",
                times[i]
            )));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidInstance(format!(
                "arrivals not sorted at index {}",
                i + 1
            )));
        }
        Ok(Self { times, features })
    }

    /// All samples share feature 0.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        let features = vec![FeatureId::default(); times.len()];
        Self::new(times, features)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn last_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Number of distinct feature ids needed to name every sample.
    pub fn universe_size(&self) -> usize {
        self.features
            .iter()
            .map(|v| v.0 as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// The first `len` arrivals.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        let len = len.min(self.len());
        Self::new(self.times[..len].to_vec(), self.features[..len].to_vec())
    }

    /// Shift every arrival by `dt`.
    pub fn translated(&self, dt: f64) -> Result<Self> {
        Self::new(
            self.times.iter().map(|t| t + dt).collect(),
            self.features.clone(),
        )
    }
}

/// Consecutive samples `range` processed together at `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub range: Range<usize>,
    pub time: f64,
}

impl Batch {
    pub fn new(range: Range<usize>, time: f64) -> Self {
        Self { range, time }
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    /// Index of the last sample in the batch.
    pub fn last(&self) -> usize {
        self.range.end - 1
    }
}

/// Ordered batches; valid schedules partition `0..n` into consecutive
/// ranges processed at strictly increasing times, no earlier than the
/// last arrival of each batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    batches: Vec<Batch>,
}

impl Schedule {
    pub fn new(batches: Vec<Batch>) -> Self {
        Self { batches }
    }

    /// Batches ending (inclusive) at each index in `last_indices`, each
    /// processed at its last arrival.
    pub fn at_last_arrivals(inst: &ProblemInstance, last_indices: &[usize]) -> Self {
        let mut start = 0;
        let batches = last_indices
            .iter()
            .map(|&last| {
                let b = Batch::new(start..last + 1, inst.time(last));
                start = last + 1;
                b
            })
            .collect();
        Self { batches }
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.batches.iter().map(|b| b.time).collect()
    }

    /// Merge adjacent batches that share a processing time.
    pub fn merge_coincident(self) -> Self {
        let mut batches: Vec<Batch> = Vec::with_capacity(self.batches.len());
        for b in self.batches {
            match batches.last_mut() {
                Some(prev) if prev.time == b.time && prev.range.end == b.range.start => {
                    prev.range.end = b.range.end;
                }
                _ => batches.push(b),
            }
        }
        Self { batches }
    }

    pub fn translated(&self, dt: f64) -> Self {
        Self {
            batches: self
                .batches
                .iter()
                .map(|b| Batch::new(b.range.clone(), b.time + dt))
                .collect(),
        }
    }

    pub fn validate(&self, inst: &ProblemInstance) -> Result<()> {
        let infeasible = |msg: String| Err(Error::InfeasibleSchedule(msg));
        let mut next = 0;
        let mut prev_time = f64::NEG_INFINITY;
        for (j, b) in self.batches.iter().enumerate() {
            if b.range.start != next || b.range.is_empty() {
                return infeasible(format!(
                    "batch {j} covers {:?}, expected a non-empty range starting at {next}",
                    b.range
                ));
            }
            if b.range.end > inst.len() {
                return infeasible(format!("batch {j} extends past sample {}", inst.len() - 1));
            }
            if !b.time.is_finite() || b.time <= prev_time {
                return infeasible(format!(
                    "batch {j} time {} does not increase strictly",
                    b.time
                ));
            }
            if b.time < inst.time(b.last()) {
                return infeasible(format!(
                    "batch {j} processed at {} before sample {} arrives at {}",
                    b.time,
                    b.last(),
                    inst.time(b.last())
                ));
            }
            next = b.range.end;
            prev_time = b.time;
        }
        if next != inst.len() {
            return infeasible(format!("samples {next}.. are never processed"));
        }
        Ok(())
    }

    /// Processing time `d_i` of every sample.
    pub fn departure_times(&self) -> Vec<f64> {
        self.batches
            .iter()
            .flat_map(|b| std::iter::repeat_n(b.time, b.len()))
            .collect()
    }
}

/// Average waiting time `wait` (W), average per-sample processing cost
/// `processing` (F) and their sum `total` (J).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleCost {
    pub wait: f64,
    pub processing: f64,
    pub total: f64,
}

impl ScheduleCost {
    pub fn new(wait: f64, processing: f64) -> Self {
        Self {
            wait,
            processing,
            total: wait + processing,
        }
    }
}

/// Objective of `sched` on `inst`.
pub fn cost_of(inst: &ProblemInstance, sched: &Schedule, f: &CostFunction) -> Result<ScheduleCost> {
    sched.validate(inst)?;
    let n = inst.len() as f64;
    let waits = sched
        .batches
        .iter()
        .flat_map(|b| inst.times[b.range.clone()].iter().map(move |a| b.time - a));
    let wait = compensated_sum(waits) / n;
    let costs = sched
        .batches
        .iter()
        .map(|b| f.evaluate_slice(&inst.features[b.range.clone()]))
        .collect::<Result<Vec<_>>>()?;
    let processing = compensated_sum(costs) / n;
    Ok(ScheduleCost::new(wait, processing))
}

/// Right-continuous step function: `values[k]` holds on
/// `[breakpoints[k], breakpoints[k+1])`, and the function is zero before the
/// first and after the last breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCurve {
    breakpoints: Vec<f64>,
    values: Vec<i64>,
}

impl StepCurve {
    /// Build from `(time, delta)` jumps.
    fn from_jumps(mut jumps: Vec<(f64, i64)>) -> Self {
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut breakpoints: Vec<f64> = Vec::new();
        let mut values: Vec<i64> = Vec::new();
        let mut level = 0i64;
        for (t, d) in jumps {
            level += d;
            if breakpoints.last() == Some(&t) {
                *values.last_mut().unwrap() = level;
            } else {
                breakpoints.push(t);
                values.push(level);
            }
        }
        Self {
            breakpoints,
            values,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn value_at(&self, t: f64) -> i64 {
        match self.breakpoints.partition_point(|&b| b <= t) {
            0 => 0,
            k => self.values[k - 1],
        }
    }

    /// Integral over the whole line.
    pub fn integral(&self) -> f64 {
        self.integral_between(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Integral over `[lo, hi]`.
    pub fn integral_between(&self, lo: f64, hi: f64) -> f64 {
        let pieces = self.breakpoints.iter().enumerate().map(|(k, &start)| {
            let end = self.breakpoints.get(k + 1).copied().unwrap_or(start);
            let (s, e) = (start.max(lo), end.min(hi));
            if e > s {
                self.values[k] as f64 * (e - s)
            } else {
                0.0
            }
        });
        compensated_sum(pieces)
    }

    /// `∫ (self − other)⁺ dτ`.
    pub fn positive_gap_integral(&self, other: &StepCurve) -> f64 {
        let mut grid: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(&other.breakpoints)
            .copied()
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let pieces = grid.windows(2).map(|w| {
            let gap = self.value_at(w[0]) - other.value_at(w[0]);
            if gap > 0 {
                gap as f64 * (w[1] - w[0])
            } else {
                0.0
            }
        });
        compensated_sum(pieces)
    }
}

/// Number of samples arrived but not yet processed, `u_t = |{i : a_i ≤ t < d_i}|`.
///
/// `sched` must be valid for `inst`.
pub fn pending_count_curve(inst: &ProblemInstance, sched: &Schedule) -> StepCurve {
    let mut jumps = Vec::with_capacity(2 * inst.len());
    for (a, d) in inst.times.iter().zip(sched.departure_times()) {
        if d > *a {
            jumps.push((*a, 1));
            jumps.push((d, -1));
        }
    }
    StepCurve::from_jumps(jumps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sqrt() -> CostFunction {
        CostFunction::sqrt()
    }

    #[test]
    fn instance_validation() {
        assert!(matches!(
            ProblemInstance::from_times(vec![]),
            Err(Error::EmptyInstance)
        ));
        assert!(ProblemInstance::from_times(vec![1.0, 0.5]).is_err());
        assert!(ProblemInstance::from_times(vec![-1.0]).is_err());
        assert!(ProblemInstance::from_times(vec![f64::NAN]).is_err());
        assert!(ProblemInstance::from_times(vec![0.0, 0.0, 2.0]).is_ok());
        assert!(ProblemInstance::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn cost_single_sample() {
        let inst = ProblemInstance::from_times(vec![0.0]).unwrap();
        let s = Schedule::new(vec![Batch::new(0..1, 0.0)]);
        let c = cost_of(&inst, &s, &sqrt()).unwrap();
        assert_eq!((c.wait, c.processing, c.total), (0.0, 1.0, 1.0));
    }

    #[test]
    fn cost_two_samples() {
        let inst = ProblemInstance::from_times(vec![0.0, 100.0]).unwrap();
        let split = Schedule::at_last_arrivals(&inst, &[0, 1]);
        let c = cost_of(&inst, &split, &sqrt()).unwrap();
        assert_eq!((c.wait, c.processing, c.total), (0.0, 1.0, 1.0));

        let joint = Schedule::new(vec![Batch::new(0..2, 100.0)]);
        let c = cost_of(&inst, &joint, &sqrt()).unwrap();
        assert_eq!(c.wait, 50.0);
        assert_relative_eq!(c.processing, 2f64.sqrt() / 2.0, max_relative = 1e-15);
        assert_relative_eq!(c.total, 50.707_106_781_186_55, max_relative = 1e-15);
    }

    #[test]
    fn infeasible_schedules() {
        let inst = ProblemInstance::from_times(vec![0.0, 1.0, 2.0]).unwrap();
        let f = sqrt();
        let cases = [
            vec![Batch::new(0..2, 1.0)],                        // misses sample 2
            vec![Batch::new(0..2, 0.5), Batch::new(2..3, 2.0)], // early
            vec![Batch::new(0..1, 1.0), Batch::new(1..3, 1.0)], // equal times
            vec![Batch::new(0..1, 0.0), Batch::new(2..3, 2.0)], // gap
            vec![Batch::new(0..1, 0.0), Batch::new(0..3, 2.0)], // overlap
            vec![Batch::new(0..4, 9.0)],                        // overrun
        ];
        for batches in cases {
            let err = cost_of(&inst, &Schedule::new(batches.clone()), &f).unwrap_err();
            assert!(
                err.to_string().starts_with("infeasible schedule"),
                "{batches:?}"
            );
        }
    }

    #[test]
    fn merge_coincident_batches() {
        let s = Schedule::new(vec![
            Batch::new(0..1, 0.0),
            Batch::new(1..3, 0.0),
            Batch::new(3..4, 1.0),
        ])
        .merge_coincident();
        assert_eq!(s.batches(), &[Batch::new(0..3, 0.0), Batch::new(3..4, 1.0)]);
    }

    #[test]
    fn pending_curve_examples() {
        let one = ProblemInstance::from_times(vec![0.0]).unwrap();
        let s = Schedule::new(vec![Batch::new(0..1, 0.5)]);
        let u = pending_count_curve(&one, &s);
        assert_eq!(u.value_at(0.0), 1);
        assert_eq!(u.value_at(0.25), 1);
        assert_eq!(u.value_at(0.5), 0);
        assert_eq!(u.value_at(-1.0), 0);
        assert_eq!(u.integral(), 0.5);

        let two = ProblemInstance::from_times(vec![0.0, 0.2]).unwrap();
        let s = Schedule::new(vec![Batch::new(0..2, 0.4536)]);
        let u = pending_count_curve(&two, &s);
        assert_relative_eq!(u.integral(), 0.2 + 2.0 * 0.2536, max_relative = 1e-14);
        assert_relative_eq!(
            u.integral_between(0.1, 0.3),
            0.1 + 0.2,
            max_relative = 1e-14
        );

        let inst = ProblemInstance::from_times(vec![0.0, 1.0, 3.0]).unwrap();
        let s = Schedule::at_last_arrivals(&inst, &[0, 1, 2]);
        assert_eq!(pending_count_curve(&inst, &s).integral(), 0.0);
    }

    #[test]
    fn positive_gap() {
        let inst = ProblemInstance::from_times(vec![0.0, 1.0]).unwrap();
        let late = Schedule::new(vec![Batch::new(0..2, 3.0)]);
        let early = Schedule::at_last_arrivals(&inst, &[0, 1]);
        let ul = pending_count_curve(&inst, &late);
        let ue = pending_count_curve(&inst, &early);
        assert_eq!(ul.positive_gap_integral(&ue), ul.integral());
        assert_eq!(ue.positive_gap_integral(&ul), 0.0);
    }

    fn arb_instance_and_schedule() -> impl Strategy<Value = (ProblemInstance, Schedule)> {
        (
            prop::collection::vec(0.0f64..50.0, 1..40),
            prop::collection::vec(any::<bool>(), 40),
            prop::collection::vec(0.0f64..3.0, 40),
        )
            .prop_map(|(mut times, cuts, delays)| {
                times.sort_by(f64::total_cmp);
                let n = times.len();
                let inst = ProblemInstance::from_times(times).unwrap();
                let mut batches = Vec::new();
                let mut start = 0;
                let mut prev = f64::NEG_INFINITY;
                for i in 0..n {
                    if i == n - 1 || cuts[i] {
                        let t = (inst.time(i) + delays[i]).max(prev + 1e-3);
                        batches.push(Batch::new(start..i + 1, t));
                        prev = t;
                        start = i + 1;
                    }
                }
                (inst, Schedule::new(batches))
            })
    }

    proptest! {
        #[test]
        fn curve_integral_matches_wait((inst, sched) in arb_instance_and_schedule()) {
            let c = cost_of(&inst, &sched, &sqrt()).unwrap();
            let area = pending_count_curve(&inst, &sched).integral();
            let nw = c.wait * inst.len() as f64;
            prop_assert!((area - nw).abs() <= 1e-12 * nw.max(1e-300) || area == nw);
            prop_assert_eq!(c.total, c.wait + c.processing);
        }

        #[test]
        fn cost_translation_invariant((inst, sched) in arb_instance_and_schedule(), dt in 0.0f64..1e3) {
            let c0 = cost_of(&inst, &sched, &sqrt()).unwrap();
            let c1 = cost_of(&inst.translated(dt).unwrap(), &sched.translated(dt), &sqrt()).unwrap();
            prop_assert!((c0.total - c1.total).abs() <= 1e-9 * c0.total.max(1.0));
            prop_assert_eq!(c0.processing, c1.processing);
        }
    }
}
