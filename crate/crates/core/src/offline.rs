//! Exact offline optimum.
//!
//! The schedule problem is a shortest path on the DAG with nodes `0..=n`
//! where edge `(i, j)` means "samples `i..j` form one batch processed at
//! `a_{j-1}`". [`osp`] relaxes nodes forward in their natural topological
//! order, [`dual_recursion`] solves the dual of the path LP backwards, and
//! [`brute_force_optimum`] enumerates every consecutive partition for small
//! instances.

use crate::cost::{BatchAccumulator, CostFunction};
use crate::error::{Error, Result};
use crate::instance::{cost_of, ProblemInstance, Schedule, ScheduleCost};

/// Lazy edge weights
/// `e(i, j) = f(v_i..v_{j-1}) + Σ_{k=i}^{j-1} (a_{j-1} − a_k)` from prefix sums.
#[derive(Debug)]
pub struct EdgeWeightOracle<'a> {
    inst: &'a ProblemInstance,
    f: &'a CostFunction,
    origin: f64,
    /// `prefix[j] = Σ_{k<j} (a_k − origin)`
    prefix: Vec<f64>,
}

impl<'a> EdgeWeightOracle<'a> {
    pub fn new(inst: &'a ProblemInstance, f: &'a CostFunction) -> Self {
        // shifting by a_0 keeps the prefix sums small; e(i, j) is translation invariant
        let origin = inst.time(0);
        let mut prefix = Vec::with_capacity(inst.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &a in inst.times() {
            acc += a - origin;
            prefix.push(acc);
        }
        Self {
            inst,
            f,
            origin,
            prefix,
        }
    }

    pub fn n(&self) -> usize {
        self.inst.len()
    }

    /// Total waiting time if samples `i..j` wait for sample `j - 1`.
    pub fn wait_part(&self, i: usize, j: usize) -> f64 {
        let last = self.inst.time(j - 1) - self.origin;
        ((j - i) as f64 * last - (self.prefix[j] - self.prefix[i])).max(0.0)
    }

    pub fn weight(&self, i: usize, j: usize) -> Result<f64> {
        assert!(i < j && j <= self.n(), "edge ({i}, {j}) out of range");
        let cost = self.f.evaluate_slice(&self.inst.features()[i..j])?;
        Ok(cost + self.wait_part(i, j))
    }

    fn weight_with_cost(&self, i: usize, j: usize, batch_cost: f64) -> f64 {
        batch_cost + self.wait_part(i, j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSolution {
    pub schedule: Schedule,
    pub cost: ScheduleCost,
}

/// Minimum-cost schedule via a shortest path over nodes `0..=n`.
///
/// Runs in `O(n² T_n)` with memory `O(n)`. Among equal-cost predecessors the
/// smallest index wins. The returned cost is re-evaluated with
/// [`cost_of`] on the returned schedule.
pub fn osp(inst: &ProblemInstance, f: &CostFunction) -> Result<OfflineSolution> {
    let n = inst.len();
    if n == 0 {
        return Err(Error::EmptyInstance);
    }
    let oracle = EdgeWeightOracle::new(inst, f);
    let features = inst.features();
    let mut dist = vec![f64::INFINITY; n + 1];
    let mut pred = vec![0usize; n + 1];
    dist[0] = 0.0;
    for j in 1..=n {
        let mut batch = BatchAccumulator::new(f);
        for i in (0..j).rev() {
            batch.push(features[i]);
            let cand = dist[i] + oracle.weight_with_cost(i, j, batch.cost()?);
            if cand <= dist[j] {
                dist[j] = cand;
                pred[j] = i;
            }
        }
    }
    let mut ends = Vec::new();
    let mut node = n;
    while node > 0 {
        ends.push(node - 1);
        node = pred[node];
    }
    ends.reverse();
    let schedule = Schedule::at_last_arrivals(inst, &ends).merge_coincident();
    let cost = cost_of(inst, &schedule, f)?;
    Ok(OfflineSolution { schedule, cost })
}

/// Default instance size cap for [`brute_force_optimum`].
pub const BRUTE_FORCE_MAX_N: usize = 20;

/// Enumerate all `2^{n-1}` consecutive partitions, each batch processed at
/// its last arrival. Ties go to fewer batches, then to the lexicographically
/// earliest list of split points.
pub fn brute_force_optimum(
    inst: &ProblemInstance,
    f: &CostFunction,
    max_n: usize,
) -> Result<OfflineSolution> {
    let n = inst.len();
    if n > max_n {
        return Err(Error::OracleSizeLimit { n, max: max_n });
    }
    let mut best: Option<(OfflineSolution, Vec<usize>)> = None;
    for mask in 0u64..(1u64 << (n - 1)) {
        let mut ends: Vec<usize> = (0..n - 1).filter(|k| mask >> k & 1 == 1).collect();
        ends.push(n - 1);
        let schedule = Schedule::at_last_arrivals(inst, &ends);
        // splitting simultaneous arrivals gives coincident times, which the model forbids
        if schedule.validate(inst).is_err() {
            continue;
        }
        let cost = cost_of(inst, &schedule, f)?;
        let better = match &best {
            None => true,
            Some((b, b_ends)) => {
                cost.total < b.cost.total
                    || (cost.total == b.cost.total && (ends.len(), &ends) < (b_ends.len(), b_ends))
            }
        };
        if better {
            best = Some((OfflineSolution { schedule, cost }, ends));
        }
    }
    // the single-batch partition is always valid
    Ok(best.expect("at least one partition").0)
}

/// Solution of the dual recursion `λ_i = min_{j>i} e(i,j)/n + λ_j`,
/// `λ_n = 0` (nodes indexed from 0).
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    /// Minimizing successor of every node `0..n`.
    pub successor: Vec<usize>,
}

impl DualSolution {
    /// `λ_0`, the optimal objective.
    pub fn objective(&self) -> f64 {
        self.lambda[0]
    }

    /// Follow `0 → r_0 → r_{r_0} → … → n`.
    pub fn path(&self) -> Vec<usize> {
        let n = self.successor.len();
        let mut path = vec![0];
        let mut node = 0;
        while node < n {
            node = self.successor[node];
            path.push(node);
        }
        path
    }

    pub fn schedule(&self, inst: &ProblemInstance) -> Schedule {
        let ends: Vec<usize> = self.path()[1..].iter().map(|j| j - 1).collect();
        Schedule::at_last_arrivals(inst, &ends).merge_coincident()
    }

    /// Largest `λ_i − (e(i,j)/n + λ_j)` over all `i < j`; non-positive when
    /// the solution is dual feasible.
    pub fn max_infeasibility(&self, inst: &ProblemInstance, f: &CostFunction) -> Result<f64> {
        let oracle = EdgeWeightOracle::new(inst, f);
        let n = inst.len();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            let mut batch = BatchAccumulator::new(f);
            for j in i + 1..=n {
                batch.push(inst.features()[j - 1]);
                let rhs = oracle.weight_with_cost(i, j, batch.cost()?) / n as f64 + self.lambda[j];
                worst = worst.max(self.lambda[i] - rhs);
            }
        }
        Ok(worst)
    }
}

/// Backward dual recursion; ties go to the smallest successor.
pub fn dual_recursion(inst: &ProblemInstance, f: &CostFunction) -> Result<DualSolution> {
    let n = inst.len();
    let oracle = EdgeWeightOracle::new(inst, f);
    let features = inst.features();
    let scale = n as f64;
    let mut lambda = vec![0.0; n + 1];
    let mut successor = vec![n; n];
    for i in (0..n).rev() {
        let mut batch = BatchAccumulator::new(f);
        let mut best = f64::INFINITY;
        for j in i + 1..=n {
            batch.push(features[j - 1]);
            let cand = oracle.weight_with_cost(i, j, batch.cost()?) / scale + lambda[j];
            if cand < best {
                best = cand;
                successor[i] = j;
            }
        }
        lambda[i] = best;
    }
    Ok(DualSolution { lambda, successor })
}

/// 0/1 assignment of the path ILP for a schedule: `edges` lists every
/// `(i, j)` with `x_{i,j} = 1`, i.e. batch `i..j`.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpCertificate {
    pub edges: Vec<(usize, usize)>,
    /// `(1/n) Σ x_{i,j} e(i,j)`
    pub objective: f64,
    /// `J` of the schedule the certificate was built from.
    pub schedule_total: f64,
}

/// Check the flow constraints: one unit leaves node 0 and flow is conserved
/// at every node `1..n`.
pub fn verify_ilp_assignment(n: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut out_flow = vec![0i64; n + 1];
    let mut in_flow = vec![0i64; n + 1];
    for &(i, j) in edges {
        if i >= j || j > n {
            return Err(Error::ConstraintViolation {
                node: i,
                detail: format!("edge ({i}, {j}) is not a forward edge of the graph"),
            });
        }
        out_flow[i] += 1;
        in_flow[j] += 1;
    }
    if out_flow[0] != 1 {
        return Err(Error::ConstraintViolation {
            node: 0,
            detail: format!("outflow {} from the source, expected 1", out_flow[0]),
        });
    }
    for i in 1..n {
        if out_flow[i] != in_flow[i] {
            return Err(Error::ConstraintViolation {
                node: i,
                detail: format!("outflow {} but inflow {}", out_flow[i], in_flow[i]),
            });
        }
    }
    Ok(())
}

/// Encode `sched` as an ILP assignment, check feasibility and compare the
/// ILP objective with the schedule cost.
///
/// The ILP prices each batch as if processed at its last arrival, so the
/// objective equals `J` when the schedule does that and is at most `J`
/// otherwise.
pub fn ilp_certificate(
    inst: &ProblemInstance,
    f: &CostFunction,
    sched: &Schedule,
) -> Result<IlpCertificate> {
    let cost = cost_of(inst, sched, f)?;
    let edges: Vec<(usize, usize)> = sched
        .batches()
        .iter()
        .map(|b| (b.range.start, b.range.end))
        .collect();
    verify_ilp_assignment(inst.len(), &edges)?;
    let oracle = EdgeWeightOracle::new(inst, f);
    let weights = edges
        .iter()
        .map(|&(i, j)| oracle.weight(i, j))
        .collect::<Result<Vec<_>>>()?;
    let objective = crate::instance::compensated_sum(weights) / inst.len() as f64;
    let tight = sched
        .batches()
        .iter()
        .all(|b| b.time == inst.time(b.last()));
    let tol = 1e-9 * cost.total.abs().max(1e-12);
    let consistent = if tight {
        (objective - cost.total).abs() <= tol
    } else {
        objective <= cost.total + tol
    };
    if !consistent {
        return Err(Error::InfeasibleSchedule(format!(
            "ILP objective {objective} disagrees with schedule cost {}",
            cost.total
        )));
    }
    Ok(IlpCertificate {
        edges,
        objective,
        schedule_total: cost.total,
    })
}
