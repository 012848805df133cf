//! Penalized multinomial likelihood for the number of extremal clusters and
//! for the level `k`, and the full selection pipeline.
//!
//! At level `k` the sorted counts `T_1 >= .. >= T_r` are modelled as a
//! multinomial with free probabilities for the first `s` clusters and a
//! common probability for the remaining `r - s` (the bias block). The number
//! of clusters minimizes `-log L + (s + 1)`; the level minimizes
//! `(-log L + (s + 1) - k log(1 - k/n)) / k`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::numeric::{ln_factorial, xlogy};
use crate::tail::{
    count_clusters_ordered, zeta_estimator, ClusterCounts, NormOrder, ProbabilityVector, Sample,
};

/// One candidate model at a fixed level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    /// Effective level (number of strict exceedances).
    pub k: u64,
    pub s: usize,
    /// Number of observed clusters.
    pub r: usize,
    pub n: usize,
    pub log_likelihood: f64,
    pub bias_criterion: f64,
    pub threshold_criterion: f64,
}

impl ModelFit {
    /// Fit with the given log-likelihood; derives both criteria.
    pub fn new(k: u64, s: usize, r: usize, n: usize, log_likelihood: f64) -> Result<Self> {
        let bias_criterion = -log_likelihood + (s + 1) as f64;
        let threshold_criterion = threshold_value(bias_criterion, k, n)?;
        Ok(Self {
            k,
            s,
            r,
            n,
            log_likelihood,
            bias_criterion,
            threshold_criterion,
        })
    }
}

fn check_s(s: usize, r: usize) -> Result<()> {
    if s == 0 || s > r {
        return Err(Error::OutOfRange(format!("s = {s} outside 1..={r}")));
    }
    Ok(())
}

/// Log-likelihood at the MLE of the model with `s` free clusters, from
/// counts sorted in decreasing order.
pub fn log_likelihood_sorted(counts: &[u64], s: usize) -> Result<f64> {
    let r = counts.len();
    check_s(s, r)?;
    if counts.windows(2).any(|w| w[0] < w[1]) || counts.contains(&0) {
        return Err(Error::InvalidInput(
            "counts must be positive and sorted decreasingly".into(),
        ));
    }
    let k: u64 = counts.iter().sum();
    let kf = k as f64;

    let mut ll = ln_factorial(k) - counts.iter().map(|&t| ln_factorial(t)).sum::<f64>();
    ll += counts[..s]
        .iter()
        .map(|&t| xlogy(t as f64, t as f64 / kf))
        .sum::<f64>();
    if s < r {
        let head: u64 = counts[..s].iter().sum();
        let tail = k - head;
        if tail == 0 {
            return Err(Error::Degenerate("bias block has zero probability".into()));
        }
        let bias_p = (1.0 - head as f64 / kf) / (r - s) as f64;
        ll += xlogy(tail as f64, bias_p);
    }
    Ok(ll)
}

pub fn log_likelihood_at_mle(counts: &ClusterCounts, s: usize) -> Result<f64> {
    log_likelihood_sorted(&counts.sorted_counts(), s)
}

fn threshold_value(bias_criterion: f64, k: u64, n: usize) -> Result<f64> {
    if k == 0 || k as usize >= n {
        return Err(Error::LevelOutOfRange { k: k as usize, n });
    }
    let kf = k as f64;
    Ok((bias_criterion - kf * (-kf / n as f64).ln_1p()) / kf)
}

/// Level-selection criterion of a fit for a sample of size `n`.
pub fn threshold_criterion(fit: &ModelFit, n: usize) -> Result<f64> {
    threshold_value(fit.bias_criterion, fit.k, n)
}

/// Evaluates `-log L + (s + 1)` for every `s = 1..=r` and returns the
/// minimizer (smallest `s` on ties) with all fits.
pub fn bias_select(counts: &ClusterCounts) -> Result<(usize, Vec<ModelFit>)> {
    let t = counts.sorted_counts();
    let r = t.len();
    if r == 0 {
        return Err(Error::InvalidInput("no observed clusters".into()));
    }
    let k = counts.k();
    let kf = k as f64;
    let base = ln_factorial(k) - t.iter().map(|&x| ln_factorial(x)).sum::<f64>();

    let mut fits = Vec::with_capacity(r);
    let mut head_terms = 0.0;
    let mut head: u64 = 0;
    for s in 1..=r {
        let ts = t[s - 1];
        head += ts;
        head_terms += xlogy(ts as f64, ts as f64 / kf);
        let tail = k - head;
        let bias_terms = if s < r {
            xlogy(tail as f64, tail as f64 / (kf * (r - s) as f64))
        } else {
            0.0
        };
        fits.push(ModelFit::new(
            k,
            s,
            r,
            counts.n,
            base + head_terms + bias_terms,
        )?);
    }

    let best = fits
        .iter()
        .min_by(|a, b| {
            a.bias_criterion
                .total_cmp(&b.bias_criterion)
                .then(a.s.cmp(&b.s))
        })
        .map(|f| f.s)
        .expect("at least one fit");
    Ok((best, fits))
}

/// Candidate levels spanning `[lo_frac * n, hi_frac * n]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo_frac: f64,
    pub hi_frac: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo_frac: 0.005,
            hi_frac: 0.1,
            points: 40,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lo_frac > 0.0 && self.hi_frac < 1.0 && self.lo_frac < self.hi_frac;
        if !ok || self.points == 0 {
            return Err(Error::InvalidInput(format!(
                "grid fractions must satisfy 0 < lo < hi < 1 with at least one point, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Evenly spaced, rounded, deduplicated levels within `[1, n-1]`.
    pub fn levels(&self, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "sample of size {n} has no valid level"
            )));
        }
        let (lo, hi) = (self.lo_frac * n as f64, self.hi_frac * n as f64);
        let mut ks: Vec<usize> = (0..self.points)
            .map(|i| {
                let t = if self.points == 1 {
                    0.0
                } else {
                    i as f64 / (self.points - 1) as f64
                };
                (lo + t * (hi - lo)).round() as usize
            })
            .map(|k| k.clamp(1, n - 1))
            .collect();
        ks.dedup();
        Ok(ks)
    }
}

/// One point of the level-selection curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub k_effective: u64,
    pub s_hat: usize,
    pub criterion: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub k_hat: usize,
    pub k_effective: u64,
    pub threshold: f64,
    pub s_hat: usize,
    /// Selected clusters by decreasing count.
    pub clusters: Vec<Cluster>,
    pub zeta: ProbabilityVector,
    pub counts: ClusterCounts,
    pub curve: Vec<CurvePoint>,
    pub maximal_flags: BTreeMap<Cluster, bool>,
    /// Set when the cluster of all coordinates is selected; its face is
    /// over-represented under an isotropic bias, so read it with care.
    pub full_cluster_selected: bool,
}

/// Runs count, bias selection and level selection over `levels` and
/// returns the minimizing level with its clusters and `zeta`.
pub fn muscle(sample: &Sample, levels: &[usize]) -> Result<SelectionResult> {
    let mut grid = levels.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let Some(&k_max) = grid.last() else {
        return Err(Error::InvalidInput("empty level grid".into()));
    };
    if let Some(&k) = grid.iter().find(|&&k| k == 0 || k >= sample.n()) {
        return Err(Error::LevelOutOfRange { k, n: sample.n() });
    }

    let order = NormOrder::new(sample);
    if order.positive_count() < k_max + 1 {
        return Err(Error::Degenerate(format!(
            "{} nonzero rows, need at least {} for level {k_max}",
            order.positive_count(),
            k_max + 1
        )));
    }

    let evaluated: Vec<(ClusterCounts, usize, f64)> = grid
        .par_iter()
        .map(|&k| {
            let counts = count_clusters_ordered(sample, &order, k)?;
            let (s_hat, fits) = bias_select(&counts)?;
            let criterion = fits[s_hat - 1].threshold_criterion;
            Ok((counts, s_hat, criterion))
        })
        .collect::<Result<_>>()?;

    let best = evaluated
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.2.total_cmp(&b.2).then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .expect("grid is nonempty");

    let curve = evaluated
        .iter()
        .map(|(c, s, crit)| CurvePoint {
            k: c.level,
            k_effective: c.k(),
            s_hat: *s,
            criterion: *crit,
        })
        .collect();

    let (counts, s_hat, _) = evaluated.into_iter().nth(best).expect("index in range");
    let zeta = zeta_estimator(&counts, s_hat)?;
    let clusters: Vec<Cluster> = counts.entries()[..s_hat]
        .iter()
        .map(|(c, _)| c.clone())
        .collect();
    let full = Cluster::full(sample.d());
    Ok(SelectionResult {
        k_hat: counts.level,
        k_effective: counts.k(),
        threshold: counts.threshold,
        s_hat,
        full_cluster_selected: clusters.contains(&full),
        maximal_flags: maximal_clusters(&clusters),
        clusters,
        zeta,
        counts,
        curve,
    })
}

/// Flags each cluster that is not strictly contained in another one.
pub fn maximal_clusters(clusters: &[Cluster]) -> BTreeMap<Cluster, bool> {
    clusters
        .iter()
        .map(|c| {
            let maximal = !clusters.iter().any(|o| c.is_strict_subset(o));
            (c.clone(), maximal)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(ix: &[usize]) -> Cluster {
        Cluster::from_indices(ix.iter().copied()).unwrap()
    }

    fn counts_of(t: &[u64]) -> ClusterCounts {
        let k: u64 = t.iter().sum();
        ClusterCounts::from_tallies(
            t.iter()
                .enumerate()
                .map(|(i, &x)| (Cluster::singleton(i), x)),
            k as usize,
            1.0,
            1000,
        )
    }

    #[test]
    fn log_likelihood_examples() {
        // log 4! - log 3! + 3 log(3/4) + log(1/4)
        let ll = log_likelihood_sorted(&[3, 1], 1).unwrap();
        assert!((ll - -0.863046217355343).abs() < 1e-12, "{ll}");
        let ll = log_likelihood_sorted(&[2, 2], 2).unwrap();
        assert!((ll - (6f64.ln() - 4.0 * 2f64.ln())).abs() < 1e-12);
        assert!((ll - -0.980829253011726).abs() < 1e-12);
        assert_eq!(log_likelihood_sorted(&[17], 1).unwrap(), 0.0);
    }

    #[test]
    fn log_likelihood_errors() {
        assert!(log_likelihood_sorted(&[3, 1], 0).is_err());
        assert!(log_likelihood_sorted(&[3, 1], 3).is_err());
        assert!(log_likelihood_sorted(&[1, 3], 1).is_err());
        assert!(log_likelihood_sorted(&[3, 0], 1).is_err());
    }

    #[test]
    fn bias_selection_examples() {
        let counts = ClusterCounts::from_tallies(
            vec![(c(&[0]), 50), (c(&[1]), 48), (c(&[0, 1]), 2)],
            100,
            1.0,
            10_000,
        );
        assert_eq!(bias_select(&counts).unwrap().0, 2);
        assert_eq!(bias_select(&counts_of(&[12])).unwrap().0, 1);
        let (s, fits) = bias_select(&counts_of(&[5, 5, 5, 5])).unwrap();
        assert_eq!(s, 1);
        assert_eq!(fits.len(), 4);
        assert!(bias_select(&ClusterCounts::from_tallies(vec![], 1, 1.0, 10)).is_err());
    }

    #[test]
    fn fits_agree_with_direct_formula() {
        let t = [40, 22, 9, 4, 4, 2, 1, 1, 1];
        let (_, fits) = bias_select(&counts_of(&t)).unwrap();
        for fit in &fits {
            let direct = log_likelihood_sorted(&t, fit.s).unwrap();
            assert!((fit.log_likelihood - direct).abs() < 1e-10);
            assert_eq!(fit.bias_criterion, -fit.log_likelihood + (fit.s + 1) as f64);
        }
    }

    #[test]
    fn threshold_criterion_examples() {
        let fit = ModelFit::new(4, 1, 2, 100, -0.86305).unwrap();
        let v = threshold_criterion(&fit, 100).unwrap();
        assert!((v - 0.756584).abs() < 1e-6, "{v}");
        let fit = ModelFit::new(1, 1, 1, 2, 0.0).unwrap();
        assert!((threshold_criterion(&fit, 2).unwrap() - (2.0 + 2f64.ln())).abs() < 1e-12);
        assert!(threshold_criterion(&fit, 1).is_err());

        let fit = ModelFit::new(10, 2, 3, 1000, -3.0).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for n in (11..1000).rev() {
            let v = threshold_criterion(&fit, n).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn default_grid() {
        let ks = GridSpec::default().levels(10_000).unwrap();
        assert_eq!(ks.first(), Some(&50));
        assert_eq!(ks.last(), Some(&1000));
        assert_eq!(ks.len(), 40);
        let small = GridSpec::default().levels(100).unwrap();
        assert!(small.windows(2).all(|w| w[0] < w[1]));
        assert!(small.iter().all(|&k| (1..100).contains(&k)));
        assert!(GridSpec {
            lo_frac: 0.2,
            hi_frac: 0.1,
            points: 4
        }
        .validate()
        .is_err());
    }

    #[test]
    fn maximal_examples() {
        let flags = maximal_clusters(&[c(&[0]), c(&[0, 1])]);
        assert!(!flags[&c(&[0])]);
        assert!(flags[&c(&[0, 1])]);
        let flags = maximal_clusters(&[c(&[0]), c(&[1])]);
        assert!(flags.values().all(|&m| m));
    }

    #[test]
    fn single_axis_sample() {
        let rows: Vec<Vec<f64>> = (1..=400).map(|i| vec![i as f64, 0.0]).collect();
        let sample = Sample::from_rows(&rows).unwrap();
        let res = muscle(&sample, &[5, 10, 20, 40]).unwrap();
        assert_eq!(res.clusters, vec![c(&[0])]);
        assert_eq!(res.zeta.get(&c(&[0])), 1.0);
        assert_eq!(res.curve.len(), 4);
    }

    #[test]
    fn muscle_errors() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let sample = Sample::from_rows(&rows).unwrap();
        assert!(matches!(muscle(&sample, &[]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            muscle(&sample, &[10]),
            Err(Error::LevelOutOfRange { .. })
        ));
        // nine nonzero rows
        assert!(matches!(muscle(&sample, &[9]), Err(Error::Degenerate(_))));
    }
}
