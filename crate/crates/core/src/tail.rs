//! Order statistics of the sample norms, extremal cluster counts and the
//! tail-index estimators used for preprocessing.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::simplex::Projector;

/// `n` observations of a nonnegative `d`-dimensional vector, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    pub fn from_flat(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(d) {
            return Err(Error::InvalidInput(format!(
                "{} values do not form rows of length {d}",
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample entries must be finite and nonnegative, found {x}"
            )));
        }
        let n = data.len() / d;
        Ok(Self { data, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("rows have differing lengths".into()));
        }
        Self::from_flat(rows.concat(), d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Applies `f` to every entry. The caller guarantees nonnegative output.
    pub(crate) fn map_entries(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            n: self.n,
            d: self.d,
        }
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.d) {
            return Err(Error::InvalidInput(format!("column {c} out of range")));
        }
        let data = self
            .rows()
            .flat_map(|r| columns.iter().map(move |&c| r[c]))
            .collect();
        Self::from_flat(data, columns.len())
    }
}

/// Per-row l1 norms.
pub fn l1_norms(sample: &Sample) -> Vec<f64> {
    sample.rows().map(|r| r.iter().sum()).collect()
}

fn check_level(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        Err(Error::LevelOutOfRange { k, n })
    } else {
        Ok(())
    }
}

/// The `(k+1)`-th largest of `norms`.
pub fn threshold_from_level(norms: &[f64], k: usize) -> Result<f64> {
    check_level(k, norms.len())?;
    let mut work = norms.to_vec();
    let (_, kth, _) = work.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Observed cluster counts at one level, sorted by decreasing count with
/// lexicographic cluster order breaking ties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterCounts {
    /// Requested level `k`.
    pub level: usize,
    /// Number of strict exceedances of the threshold; equals `level` unless
    /// the norms are tied at the threshold.
    pub exceedances: u64,
    pub threshold: f64,
    pub n: usize,
    entries: Vec<(Cluster, u64)>,
}

impl ClusterCounts {
    /// Builds counts from raw tallies. Zero counts are dropped and repeated
    /// clusters are merged; the effective level is the total count.
    pub fn from_tallies<I>(tallies: I, level: usize, threshold: f64, n: usize) -> Self
    where
        I: IntoIterator<Item = (Cluster, u64)>,
    {
        let mut merged: HashMap<Cluster, u64> = HashMap::new();
        for (c, t) in tallies {
            if t > 0 {
                *merged.entry(c).or_default() += t;
            }
        }
        let mut entries: Vec<(Cluster, u64)> = merged.into_iter().collect();
        entries.sort_by(|(ca, ta), (cb, tb)| tb.cmp(ta).then_with(|| ca.cmp(cb)));
        let exceedances = entries.iter().map(|(_, t)| t).sum();
        Self {
            level,
            exceedances,
            threshold,
            n,
            entries,
        }
    }

    /// Effective `k` used by every downstream formula.
    pub fn k(&self) -> u64 {
        self.exceedances
    }

    /// Number of observed clusters.
    pub fn num_clusters(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Cluster, u64)] {
        &self.entries
    }

    pub fn sorted_counts(&self) -> Vec<u64> {
        self.entries.iter().map(|(_, t)| *t).collect()
    }

    pub fn get(&self, cluster: &Cluster) -> u64 {
        self.entries
            .iter()
            .find(|(c, _)| c == cluster)
            .map_or(0, |(_, t)| *t)
    }

    /// Total count over a group of clusters.
    pub fn aggregate<'a, I: IntoIterator<Item = &'a Cluster>>(&self, group: I) -> u64 {
        group.into_iter().map(|c| self.get(c)).sum()
    }
}

/// Norms sorted once so that thresholds and exceedances for many levels can
/// be read off without re-sorting.
#[derive(Clone, Debug)]
pub struct NormOrder {
    norms: Vec<f64>,
    order: Vec<usize>,
}

impl NormOrder {
    pub fn new(sample: &Sample) -> Self {
        Self::from_norms(l1_norms(sample))
    }

    pub fn from_norms(norms: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..norms.len()).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        Self { norms, order }
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// The `(k+1)`-th largest norm.
    pub fn threshold(&self, k: usize) -> Result<f64> {
        check_level(k, self.norms.len())?;
        Ok(self.norms[self.order[k]])
    }

    /// Row indices with norm strictly above the level-`k` threshold.
    pub fn exceedances(&self, k: usize) -> Result<&[usize]> {
        let u = self.threshold(k)?;
        let m = self.order[..k].partition_point(|&j| self.norms[j] > u);
        Ok(&self.order[..m])
    }

    pub fn positive_count(&self) -> usize {
        self.norms.iter().filter(|&&x| x > 0.0).count()
    }
}

// Pivot choice never changes the result, so a fixed stream keeps counting
// deterministic.
const COUNTING_SEED: u64 = 0x6d75_7363_6c65;

/// Tallies the support clusters of the projections of the strict exceedances
/// at level `k`.
pub fn count_clusters(sample: &Sample, k: usize) -> Result<ClusterCounts> {
    count_clusters_ordered(sample, &NormOrder::new(sample), k)
}

/// [`count_clusters`] with a precomputed norm ordering of `sample`.
pub fn count_clusters_ordered(
    sample: &Sample,
    order: &NormOrder,
    k: usize,
) -> Result<ClusterCounts> {
    let u = order.threshold(k)?;
    if !(u > 0.0) {
        return Err(Error::Degenerate(format!(
            "threshold at level {k} is zero; fewer than {} nonzero rows",
            k + 1
        )));
    }
    let mut projector = Projector::new(ChaCha8Rng::seed_from_u64(COUNTING_SEED));
    let mut tally: HashMap<Cluster, u64> = HashMap::new();
    for &j in order.exceedances(k)? {
        let cluster = projector.support(sample.row(j), u)?;
        *tally.entry(cluster).or_default() += 1;
    }
    if tally.is_empty() {
        return Err(Error::Degenerate(format!(
            "no strict exceedance at level {k}"
        )));
    }
    Ok(ClusterCounts::from_tallies(tally, k, u, sample.n()))
}

/// The observed clusters, `{beta : T(beta) > 0}`.
pub fn empirical_cluster_set(counts: &ClusterCounts) -> Vec<Cluster> {
    counts.entries.iter().map(|(c, _)| c.clone()).collect()
}

/// A probability vector over clusters; absent clusters have mass zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClusterMass>", into = "Vec<ClusterMass>")]
pub struct ProbabilityVector {
    masses: BTreeMap<Cluster, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMass {
    pub cluster: Cluster,
    pub prob: f64,
}

impl ProbabilityVector {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(masses: BTreeMap<Cluster, f64>) -> Result<Self> {
        check_normalized(&masses, Self::TOLERANCE)?;
        Ok(Self { masses })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights<I: IntoIterator<Item = (Cluster, f64)>>(weights: I) -> Result<Self> {
        let mut masses: BTreeMap<Cluster, f64> = BTreeMap::new();
        for (c, w) in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "negative or non-finite weight {w}"
                )));
            }
            *masses.entry(c).or_default() += w;
        }
        let total: f64 = masses.values().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        masses.values_mut().for_each(|w| *w /= total);
        masses.retain(|_, w| *w > 0.0);
        Ok(Self { masses })
    }

    pub fn get(&self, cluster: &Cluster) -> f64 {
        self.masses.get(cluster).copied().unwrap_or(0.0)
    }

    pub fn masses(&self) -> &BTreeMap<Cluster, f64> {
        &self.masses
    }

    /// Clusters with positive mass.
    pub fn support(&self) -> impl Iterator<Item = &Cluster> {
        self.masses.iter().filter(|(_, &p)| p > 0.0).map(|(c, _)| c)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

pub(crate) fn check_normalized(masses: &BTreeMap<Cluster, f64>, tol: f64) -> Result<()> {
    if let Some(p) = masses.values().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "probability {p} is negative or non-finite"
        )));
    }
    let total: f64 = masses.values().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidInput(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

impl TryFrom<Vec<ClusterMass>> for ProbabilityVector {
    type Error = Error;

    fn try_from(v: Vec<ClusterMass>) -> Result<Self> {
        let mut masses = BTreeMap::new();
        for m in v {
            if masses.insert(m.cluster.clone(), m.prob).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate cluster {}",
                    m.cluster
                )));
            }
        }
        Self::new(masses)
    }
}

impl From<ProbabilityVector> for Vec<ClusterMass> {
    fn from(p: ProbabilityVector) -> Self {
        p.masses
            .into_iter()
            .map(|(cluster, prob)| ClusterMass { cluster, prob })
            .collect()
    }
}

/// Renormalized frequencies of the `s_hat` most frequent clusters.
pub fn zeta_estimator(counts: &ClusterCounts, s_hat: usize) -> Result<ProbabilityVector> {
    if s_hat == 0 || s_hat > counts.num_clusters() {
        return Err(Error::OutOfRange(format!(
            "s_hat = {s_hat} outside 1..={}",
            counts.num_clusters()
        )));
    }
    let top = &counts.entries[..s_hat];
    let total: u64 = top.iter().map(|(_, t)| t).sum();
    let masses = top
        .iter()
        .map(|(c, t)| (c.clone(), *t as f64 / total as f64))
        .collect();
    ProbabilityVector::new(masses)
}

fn sorted_desc(norms: &[f64]) -> Vec<f64> {
    let mut s = norms.to_vec();
    s.sort_unstable_by(|a, b| b.total_cmp(a));
    s
}

fn hill_from_sorted(sorted: &[f64], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::OutOfRange(format!(
            "Hill estimator needs k >= 2, got {k}"
        )));
    }
    if sorted.len() < k {
        return Err(Error::OutOfRange(format!(
            "k = {k} exceeds {} norms",
            sorted.len()
        )));
    }
    let kth = sorted[k - 1];
    if !(kth > 0.0) {
        return Err(Error::Degenerate(format!(
            "Hill estimator needs {k} positive norms"
        )));
    }
    let spacing: f64 = sorted[..k].iter().map(|&x| (x / kth).ln()).sum::<f64>() / k as f64;
    if spacing <= 0.0 {
        return Err(Error::Degenerate(format!("top {k} norms are all equal")));
    }
    Ok(1.0 / spacing)
}

/// Hill estimate of the tail index from the `k` largest norms, with the
/// `k`-th largest as reference point.
pub fn hill_estimator(norms: &[f64], k: usize) -> Result<f64> {
    hill_from_sorted(&sorted_desc(norms), k)
}

/// Hill estimates over a range of `k`; degenerate levels map to `None`.
pub fn hill_curve(
    norms: &[f64],
    ks: impl IntoIterator<Item = usize>,
) -> Result<Vec<(usize, Option<f64>)>> {
    let sorted = sorted_desc(norms);
    let curve: Vec<_> = ks
        .into_iter()
        .map(|k| (k, hill_from_sorted(&sorted, k).ok()))
        .collect();
    if curve.is_empty() {
        return Err(Error::InvalidInput("empty range for the Hill plot".into()));
    }
    Ok(curve)
}

/// Componentwise power `x^alpha`.
pub fn power_transform(sample: &Sample, alpha: f64) -> Result<Sample> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if alpha == 1.0 {
        return Ok(sample.clone());
    }
    Ok(sample.map_entries(|x| x.powf(alpha)))
}
