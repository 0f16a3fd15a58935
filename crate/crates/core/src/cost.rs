//! Processing-cost functions on multisets of feature identifiers.
//!
//! A cost function `f` maps the multiset of features processed together in
//! one batch to a non-negative cost. Every built-in kind is expected to be
//! zero on the empty batch, monotone under multiset inclusion and
//! subadditive; [`validate_cost_function`] checks those three conditions and
//! [`gamma`] computes the curvature
//! `Γ = inf f(X ∪ Y) / (f(X) + f(Y))`, which lies in `[1/2, 1]` for any
//! function satisfying them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Identifier of an element of the finite feature set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FeatureId(pub u32);

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Multiset of features in canonical (sorted) form.
///
/// Union adds multiplicities, so `X ∪ X` has twice the size of `X`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct FeatureMultiset {
    counts: BTreeMap<FeatureId, u32>,
    size: usize,
}

impl FeatureMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(id: FeatureId) -> Self {
        let mut m = Self::new();
        m.insert(id);
        m
    }

    /// `count` copies of one feature.
    pub fn repeated(id: FeatureId, count: u32) -> Self {
        let mut m = Self::new();
        m.insert_n(id, count);
        m
    }

    pub fn insert(&mut self, id: FeatureId) {
        self.insert_n(id, 1);
    }

    pub fn insert_n(&mut self, id: FeatureId, count: u32) {
        if count == 0 {
            return;
        }
        *self.counts.entry(id).or_insert(0) += count;
        self.size += count as usize;
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn count(&self, id: FeatureId) -> u32 {
        self.counts.get(&id).copied().unwrap_or(0)
    }

    /// Distinct features with their multiplicities, in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, u32)> + '_ {
        self.counts.iter().map(|(&id, &c)| (id, c))
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.union_with(other);
        out
    }

    pub fn union_with(&mut self, other: &Self) {
        for (id, c) in other.iter() {
            self.insert_n(id, c);
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.iter().all(|(id, c)| other.count(id) >= c)
    }
}

impl FromIterator<FeatureId> for FeatureMultiset {
    fn from_iter<I: IntoIterator<Item = FeatureId>>(iter: I) -> Self {
        let mut m = Self::new();
        for id in iter {
            m.insert(id);
        }
        m
    }
}

/// Evaluator for a feature-dependent cost function.
pub type SetEvaluator = dyn Fn(&FeatureMultiset) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum CostKind {
    /// `f(X) = sqrt(|X|)`
    SqrtCount,
    /// `f(X) = ln(1 + |X|)`
    Log1pCount,
    /// `f(X) = min(slope * |X|, cap)`
    CappedLinear { slope: f64, cap: f64 },
    /// `f(∅) = 0`, otherwise `c`.
    Constant(f64),
    /// `f(X) = g[|X|]`.
    CountTable(Arc<[f64]>),
    /// Arbitrary function of the feature multiset over a universe of
    /// `universe` features.
    SetFunction {
        universe: usize,
        eval: Arc<SetEvaluator>,
    },
}

impl fmt::Debug for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKind::SqrtCount => write!(f, "SqrtCount"),
            CostKind::Log1pCount => write!(f, "Log1pCount"),
            CostKind::CappedLinear { slope, cap } => {
                write!(f, "CappedLinear {{ slope: {slope}, cap: {cap} }}")
            }
            CostKind::Constant(c) => write!(f, "Constant({c})"),
            CostKind::CountTable(g) => write!(f, "CountTable({:?})", g),
            CostKind::SetFunction { universe, .. } => {
                write!(f, "SetFunction {{ universe: {universe} }}")
            }
        }
    }
}

/// A processing-cost function together with an optional known curvature.
#[derive(Debug, Clone)]
pub struct CostFunction {
    kind: CostKind,
    gamma_hint: Option<f64>,
}

fn check_param(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be finite and non-negative, got {v}"
        )))
    }
}

impl CostFunction {
    pub fn sqrt() -> Self {
        Self::from_kind(CostKind::SqrtCount)
    }

    pub fn log1p() -> Self {
        Self::from_kind(CostKind::Log1pCount)
    }

    pub fn capped_linear(slope: f64, cap: f64) -> Result<Self> {
        Ok(Self::from_kind(CostKind::CappedLinear {
            slope: check_param("slope", slope)?,
            cap: check_param("cap", cap)?,
        }))
    }

    pub fn constant(c: f64) -> Result<Self> {
        Ok(Self::from_kind(CostKind::Constant(check_param(
            "constant", c,
        )?)))
    }

    /// Count-based function given by its values `g(0), g(1), …`.
    pub fn count_table(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("cost table is empty".into()));
        }
        for (k, &v) in values.iter().enumerate() {
            check_param(&format!("g({k})"), v)?;
        }
        Ok(Self::from_kind(CostKind::CountTable(values.into())))
    }

    pub fn set_function<F>(universe: usize, eval: F) -> Self
    where
        F: Fn(&FeatureMultiset) -> f64 + Send + Sync + 'static,
    {
        Self::from_kind(CostKind::SetFunction {
            universe,
            eval: Arc::new(eval),
        })
    }

    fn from_kind(kind: CostKind) -> Self {
        Self {
            kind,
            gamma_hint: None,
        }
    }

    /// Attach a known curvature value, used by [`gamma`] instead of a search.
    pub fn with_gamma_hint(mut self, gamma: f64) -> Result<Self> {
        if !(0.5..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "Γ hint {gamma} outside [1/2, 1]"
            )));
        }
        self.gamma_hint = Some(gamma);
        Ok(self)
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn gamma_hint(&self) -> Option<f64> {
        self.gamma_hint
    }

    /// True when `f(X)` depends only on `|X|`.
    pub fn is_count_based(&self) -> bool {
        !matches!(self.kind, CostKind::SetFunction { .. })
    }

    /// `g(k)` for count-based kinds.
    pub fn count_cost(&self, k: usize) -> Result<f64> {
        let v = match &self.kind {
            CostKind::SqrtCount => (k as f64).sqrt(),
            CostKind::Log1pCount => (k as f64).ln_1p(),
            CostKind::CappedLinear { slope, cap } => {
                if k == 0 {
                    0.0
                } else {
                    (slope * k as f64).min(*cap)
                }
            }
            CostKind::Constant(c) => {
                if k == 0 {
                    0.0
                } else {
                    *c
                }
            }
            CostKind::CountTable(g) => *g.get(k).ok_or(Error::CostTableTooShort {
                needed: k,
                len: g.len(),
            })?,
            CostKind::SetFunction { .. } => {
                return Err(Error::InvalidArgument(
                    "count_cost called on a feature-dependent cost function".into(),
                ))
            }
        };
        Ok(v)
    }

    pub fn evaluate(&self, x: &FeatureMultiset) -> Result<f64> {
        match &self.kind {
            CostKind::SetFunction { eval, .. } => {
                let v = eval(x);
                if v.is_finite() && v >= 0.0 {
                    Ok(v)
                } else {
                    Err(Error::InvalidCost {
                        value: v,
                        size: x.len(),
                    })
                }
            }
            _ => self.count_cost(x.len()),
        }
    }

    /// Cost of the batch made of `features`.
    pub fn evaluate_slice(&self, features: &[FeatureId]) -> Result<f64> {
        if self.is_count_based() {
            self.count_cost(features.len())
        } else {
            self.evaluate(&features.iter().copied().collect())
        }
    }

    /// Parse a spec string: `sqrt`, `log1p`, `cap:<slope>,<cap>`,
    /// `const:<c>` or `table:<path>`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidCostSpec(spec.to_string());
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let (head, rest) = match spec.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (spec, None),
        };
        match (head.trim(), rest) {
            ("sqrt", None) => Ok(Self::sqrt()),
            ("log1p", None) => Ok(Self::log1p()),
            ("cap", Some(r)) => {
                let (slope, cap) = r.split_once(',').ok_or_else(bad)?;
                Self::capped_linear(num(slope)?, num(cap)?).map_err(|_| bad())
            }
            ("const", Some(r)) => Self::constant(num(r)?).map_err(|_| bad()),
            ("table", Some(path)) => Self::count_table(read_table(Path::new(path))?),
            _ => Err(bad()),
        }
    }

    /// Short human-readable label, matching the spec syntax where possible.
    pub fn label(&self) -> String {
        match &self.kind {
            CostKind::SqrtCount => "sqrt".into(),
            CostKind::Log1pCount => "log1p".into(),
            CostKind::CappedLinear { slope, cap } => format!("cap:{slope},{cap}"),
            CostKind::Constant(c) => format!("const:{c}"),
            CostKind::CountTable(g) => format!("table[{}]", g.len()),
            CostKind::SetFunction { universe, .. } => format!("set[{universe}]"),
        }
    }
}

impl FromStr for CostFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_spec(s)
    }
}

fn read_table(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = line.parse::<f64>().map_err(|e| Error::Parse {
            line: idx as u64 + 1,
            message: format!("bad cost value `{line}`: {e}"),
        })?;
        values.push(v);
    }
    Ok(values)
}

/// Incrementally tracks the cost of a growing batch.
///
/// Count-based functions only need the size; feature-dependent ones keep
/// the full multiset.
#[derive(Debug, Clone)]
pub struct BatchAccumulator<'f> {
    f: &'f CostFunction,
    count: usize,
    set: Option<FeatureMultiset>,
}

impl<'f> BatchAccumulator<'f> {
    pub fn new(f: &'f CostFunction) -> Self {
        Self {
            f,
            count: 0,
            set: (!f.is_count_based()).then(FeatureMultiset::new),
        }
    }

    pub fn push(&mut self, id: FeatureId) {
        self.count += 1;
        if let Some(set) = &mut self.set {
            set.insert(id);
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn clear(&mut self) {
        self.count = 0;
        if let Some(set) = &mut self.set {
            *set = FeatureMultiset::new();
        }
    }

    pub fn cost(&self) -> Result<f64> {
        match &self.set {
            Some(set) => self.f.evaluate(set),
            None => self.f.count_cost(self.count),
        }
    }
}

/// A multiset appearing in a violation witness.
#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    /// Any multiset of this size (count-based functions).
    Count(usize),
    Set(FeatureMultiset),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `f(∅) ≠ 0`.
    NonZeroEmpty { value: f64 },
    /// `Y ⊆ X` but `f(Y) > f(X)`.
    NotMonotone {
        subset: Witness,
        superset: Witness,
        f_subset: f64,
        f_superset: f64,
    },
    /// `f(X ∪ Y) > f(X) + f(Y)`.
    NotSubadditive {
        x: Witness,
        y: Witness,
        f_x: f64,
        f_y: f64,
        f_union: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Largest batch size covered by the checks.
    pub checked_up_to: usize,
    /// Number of (X, Y) pairs examined for conditions (ii) and (iii).
    pub pairs_checked: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn exceeds(lhs: f64, rhs: f64) -> bool {
    lhs > rhs + 1e-12 * rhs.abs().max(1.0)
}

/// Check zero-at-empty, monotonicity and subadditivity.
///
/// Count-based kinds are checked exhaustively for sizes up to `max_batch`
/// (or the table length). Feature-dependent kinds are checked on `samples`
/// random pairs of multisets over `universe_size` features.
pub fn validate_cost_function(
    f: &CostFunction,
    universe_size: usize,
    max_batch: usize,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if max_batch < 1 {
        return Err(Error::InvalidArgument(
            "max_batch must be at least 1".into(),
        ));
    }
    let mut violations = Vec::new();

    if let CostKind::SetFunction { eval, .. } = &f.kind {
        let empty = eval(&FeatureMultiset::new());
        if empty != 0.0 {
            violations.push(Violation::NonZeroEmpty { value: empty });
        }
        let universe = universe_size.max(1) as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let a = rng.random_range(0..=max_batch);
            let b = rng.random_range(0..=max_batch - a);
            let x: FeatureMultiset = (0..a)
                .map(|_| FeatureId(rng.random_range(0..universe)))
                .collect();
            let y: FeatureMultiset = (0..b)
                .map(|_| FeatureId(rng.random_range(0..universe)))
                .collect();
            let xy = x.union(&y);
            let (fx, fy, fxy) = (f.evaluate(&x)?, f.evaluate(&y)?, f.evaluate(&xy)?);
            for (sub, fsub) in [(&x, fx), (&y, fy)] {
                if exceeds(fsub, fxy) {
                    violations.push(Violation::NotMonotone {
                        subset: Witness::Set(sub.clone()),
                        superset: Witness::Set(xy.clone()),
                        f_subset: fsub,
                        f_superset: fxy,
                    });
                }
            }
            if exceeds(fxy, fx + fy) {
                violations.push(Violation::NotSubadditive {
                    x: Witness::Set(x),
                    y: Witness::Set(y),
                    f_x: fx,
                    f_y: fy,
                    f_union: fxy,
                });
            }
        }
        return Ok(ValidationReport {
            violations,
            checked_up_to: max_batch,
            pairs_checked: samples,
        });
    }

    let limit = match &f.kind {
        CostKind::CountTable(g) => max_batch.min(g.len() - 1),
        _ => max_batch,
    };
    let g: Vec<f64> = (0..=limit)
        .map(|k| f.count_cost(k))
        .collect::<Result<_>>()?;
    if g[0] != 0.0 {
        violations.push(Violation::NonZeroEmpty { value: g[0] });
    }
    let mut pairs = 0;
    for a in 0..=limit {
        for b in a + 1..=limit {
            pairs += 1;
            if exceeds(g[a], g[b]) {
                violations.push(Violation::NotMonotone {
                    subset: Witness::Count(a),
                    superset: Witness::Count(b),
                    f_subset: g[a],
                    f_superset: g[b],
                });
            }
        }
    }
    for a in 1..=limit {
        for b in a..=limit - a {
            pairs += 1;
            if exceeds(g[a + b], g[a] + g[b]) {
                violations.push(Violation::NotSubadditive {
                    x: Witness::Count(a),
                    y: Witness::Count(b),
                    f_x: g[a],
                    f_y: g[b],
                    f_union: g[a + b],
                });
            }
        }
    }
    Ok(ValidationReport {
        violations,
        checked_up_to: limit,
        pairs_checked: pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSource {
    /// Closed-form infimum of a built-in family.
    Analytic,
    /// Value supplied through [`CostFunction::with_gamma_hint`].
    Hint,
    /// Exhaustive minimum over sizes `a + b ≤ up_to`.
    Search { up_to: usize },
    /// Minimum over random pairs; an upper bound on the true infimum.
    Sampled { pairs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma {
    pub value: f64,
    pub source: GammaSource,
    /// The raw search result left `[1/2, 1]` and was clamped.
    pub clamped: bool,
}

impl Gamma {
    /// True if the value may overestimate the infimum.
    pub fn is_upper_bound(&self) -> bool {
        matches!(self.source, GammaSource::Sampled { .. })
    }
}

/// Random pairs examined when estimating Γ of a feature-dependent function.
pub const GAMMA_SAMPLE_CAP: usize = 20_000;
const GAMMA_SAMPLE_SEED: u64 = 0x5eed_6a77;

/// Curvature `Γ = inf f(X ∪ Y) / (f(X) + f(Y))`.
///
/// Built-in families return their analytic infimum. Count tables are
/// searched exhaustively over `1 ≤ a, b` with `a + b ≤ max_batch`;
/// feature-dependent functions are sampled and flagged as upper bounds.
pub fn gamma(f: &CostFunction, max_batch: usize) -> Result<Gamma> {
    if max_batch < 2 {
        return Err(Error::InvalidArgument(
            "Γ search needs max_batch ≥ 2".into(),
        ));
    }
    let analytic = |value| {
        Ok(Gamma {
            value,
            source: GammaSource::Analytic,
            clamped: false,
        })
    };
    if let Some(value) = f.gamma_hint {
        return Ok(Gamma {
            value,
            source: GammaSource::Hint,
            clamped: false,
        });
    }
    let (raw, source) = match &f.kind {
        CostKind::SqrtCount => return analytic(std::f64::consts::FRAC_1_SQRT_2),
        // ln(1+2x) / (2 ln(1+x)) → 1/2 as x → ∞; never attained.
        CostKind::Log1pCount => return analytic(0.5),
        CostKind::Constant(c) if *c > 0.0 => return analytic(0.5),
        // Two saturated batches cost `cap` together and `2 cap` apart.
        CostKind::CappedLinear { slope, cap } if *slope > 0.0 && *cap > 0.0 => {
            return analytic(0.5)
        }
        CostKind::Constant(_) | CostKind::CappedLinear { .. } => {
            return Err(Error::GammaUndefined(
                "cost function is identically zero".into(),
            ))
        }
        CostKind::CountTable(g) => {
            let up_to = max_batch.min(g.len() - 1);
            let mut best: Option<f64> = None;
            for a in 1..up_to {
                for b in a..=up_to - a {
                    let num = g[a + b];
                    let den = g[a] + g[b];
                    if den == 0.0 {
                        continue;
                    }
                    let r = num / den;
                    best = Some(best.map_or(r, |m: f64| m.min(r)));
                }
            }
            let value =
                best.ok_or_else(|| Error::GammaUndefined(format!("g is zero on 1..={up_to}")))?;
            (value, GammaSource::Search { up_to })
        }
        CostKind::SetFunction { universe, .. } => {
            let value = sample_gamma(f, (*universe).max(1), max_batch)?
                .ok_or_else(|| Error::GammaUndefined("all sampled costs are zero".into()))?;
            (
                value,
                GammaSource::Sampled {
                    pairs: GAMMA_SAMPLE_CAP,
                },
            )
        }
    };
    let clamped = !(0.5..=1.0).contains(&raw);
    if clamped {
        log::warn!(
            "Γ search returned {raw}, outside [1/2, 1]; the cost function violates monotonicity or subadditivity"
        );
    }
    Ok(Gamma {
        value: raw.clamp(0.5, 1.0),
        source,
        clamped,
    })
}

fn sample_gamma(f: &CostFunction, universe: usize, max_batch: usize) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(GAMMA_SAMPLE_SEED);
    let mut best: Option<f64> = None;
    let mut consider = |x: &FeatureMultiset, y: &FeatureMultiset| -> Result<()> {
        let den = f.evaluate(x)? + f.evaluate(y)?;
        if den > 0.0 {
            let r = f.evaluate(&x.union(y))? / den;
            best = Some(best.map_or(r, |m: f64| m.min(r)));
        }
        Ok(())
    };
    // all pairs of singletons first, then random multisets
    for u in 0..universe as u32 {
        for w in u..universe as u32 {
            consider(
                &FeatureMultiset::singleton(FeatureId(u)),
                &FeatureMultiset::singleton(FeatureId(w)),
            )?;
        }
    }
    for _ in 0..GAMMA_SAMPLE_CAP {
        let a = rng.random_range(1..max_batch);
        let b = rng.random_range(1..=max_batch - a);
        let x: FeatureMultiset = (0..a)
            .map(|_| FeatureId(rng.random_range(0..universe as u32)))
            .collect();
        let y: FeatureMultiset = (0..b)
            .map(|_| FeatureId(rng.random_range(0..universe as u32)))
            .collect();
        consider(&x, &y)?;
    }
    Ok(best)
}
