//! Synthetic samples with known extremal structure, their reference cluster
//! probabilities, and the Hellinger score.
//!
//! Randomness comes from ChaCha8 streams: a 64-bit seed selects the key and
//! the stream id packs `(replication << 8) | component`, so every
//! replication and every use within it owns an independent stream and
//! parallel execution order never changes the output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::numeric::exact_sum;
use crate::simplex::Projector;
use crate::tail::{check_normalized, ProbabilityVector, Sample};

/// Stream component for sample generation.
pub const COMPONENT_SAMPLE: u8 = 0;
/// Stream component for Monte-Carlo reference draws.
pub const COMPONENT_REFERENCE: u8 = 1;
/// Stream component for multinomial simulations.
pub const COMPONENT_MULTINOMIAL: u8 = 2;

/// The RNG for `(seed, replication, component)`.
pub fn stream_rng(seed: u64, replication: u64, component: u8) -> ChaCha8Rng {
    assert!(replication < 1 << 56, "replication index too large");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replication << 8) | component as u64);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Gaussian copula with common correlation and standard Pareto margins.
    GaussianCopulaPareto,
    /// Five-dimensional max-mixture of Gaussian and logistic blocks with
    /// unit Frechet margins.
    MaxMixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub d: usize,
    pub rho: f64,
    /// Logistic dependence parameter, used by the max-mixture only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_logistic: Option<f64>,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn gaussian_copula_pareto(d: usize, rho: f64, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::GaussianCopulaPareto,
            d,
            rho,
            alpha_logistic: None,
            seed,
        }
    }

    pub fn max_mixture(rho: f64, alpha: f64, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::MaxMixture,
            d: 5,
            rho,
            alpha_logistic: Some(alpha),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::OutOfRange(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        match self.kind {
            GeneratorKind::GaussianCopulaPareto => {
                if self.d < 2 {
                    return Err(Error::InvalidInput(format!(
                        "d must be >= 2, got {}",
                        self.d
                    )));
                }
            }
            GeneratorKind::MaxMixture => {
                if self.d != 5 {
                    return Err(Error::InvalidInput(format!(
                        "the max-mixture is five-dimensional, got d = {}",
                        self.d
                    )));
                }
                match self.alpha_logistic {
                    Some(a) if a > 0.0 && a < 1.0 => {}
                    other => {
                        return Err(Error::OutOfRange(format!(
                            "logistic alpha must lie in (0, 1), got {other:?}"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws `n` rows from the `(replication, COMPONENT_SAMPLE)` stream.
    pub fn sample(&self, n: usize, replication: u64) -> Result<Sample> {
        let mut rng = stream_rng(self.seed, replication, COMPONENT_SAMPLE);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidInput("sample size must be positive".into()));
        }
        let sampler = RowSampler::new(self);
        let mut data = vec![0.0; n * self.d];
        for row in data.chunks_exact_mut(self.d) {
            sampler.fill(rng, row);
        }
        Sample::from_flat(data, self.d)
    }
}

/// Gaussian copula with equicorrelation `rho` and standard Pareto margins,
/// `P(X_j > x) = 1/x`.
pub fn gen_gaussian_copula_pareto(spec: &GeneratorSpec, n: usize) -> Result<Sample> {
    if spec.kind != GeneratorKind::GaussianCopulaPareto {
        return Err(Error::InvalidInput(
            "spec is not a Gaussian-copula generator".into(),
        ));
    }
    spec.sample(n, 0)
}

/// Max-mixture of two bivariate Gaussian blocks and three logistic blocks.
pub fn gen_max_mixture(spec: &GeneratorSpec, n: usize) -> Result<Sample> {
    if spec.kind != GeneratorKind::MaxMixture {
        return Err(Error::InvalidInput(
            "spec is not a max-mixture generator".into(),
        ));
    }
    spec.sample(n, 0)
}

/// Standard normal upper tail `1 - Phi(z)`, accurate far into the tail.
fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Positive stable variable with Laplace transform `exp(-t^alpha)`
/// (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let log_s = (alpha * u).sin().ln() - u.sin().ln() / alpha
        + (1.0 - alpha) / alpha * (((1.0 - alpha) * u).sin().ln() - e.ln());
    log_s.exp()
}

/// Symmetric logistic vector with unit Frechet margins:
/// `X_i = (S / E_i)^alpha`, `S` positive stable, `E_i` standard exponential.
pub fn logistic_block<R: Rng + ?Sized>(alpha: f64, rng: &mut R, out: &mut [f64]) {
    let s = positive_stable(alpha, rng);
    for x in out.iter_mut() {
        let e: f64 = Exp1.sample(rng);
        *x = (s / e).powf(alpha);
    }
}

/// Bivariate Gaussian copula with unit Frechet margins, `F(x) = exp(-1/x)`.
fn gaussian_frechet_pair<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> [f64; 2] {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let w = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
    [z1, w].map(|z| 1.0 / -(-normal_sf(z)).ln_1p())
}

enum RowSampler {
    Pareto { common: f64, own: f64 },
    MaxMixture { rho: f64, alpha: f64 },
}

const W_PAIR: f64 = 5.0 / 7.0;
const W_ONE: f64 = 1.0 / 7.0;
const W_THREE: f64 = 3.0 / 7.0;

impl RowSampler {
    fn new(spec: &GeneratorSpec) -> Self {
        match spec.kind {
            GeneratorKind::GaussianCopulaPareto => Self::Pareto {
                common: spec.rho.sqrt(),
                own: (1.0 - spec.rho).sqrt(),
            },
            GeneratorKind::MaxMixture => Self::MaxMixture {
                rho: spec.rho,
                alpha: spec.alpha_logistic.expect("validated"),
            },
        }
    }

    fn fill<R: Rng + ?Sized>(&self, rng: &mut R, row: &mut [f64]) {
        match *self {
            Self::Pareto { common, own } => {
                let w: f64 = StandardNormal.sample(rng);
                for x in row.iter_mut() {
                    let e: f64 = StandardNormal.sample(rng);
                    *x = 1.0 / normal_sf(common * w + own * e);
                }
            }
            Self::MaxMixture { rho, alpha } => {
                let a12 = gaussian_frechet_pair(rho, rng);
                let a45 = gaussian_frechet_pair(rho, rng);
                let mut a123 = [0.0; 3];
                let mut a345 = [0.0; 3];
                let mut a_all = [0.0; 5];
                logistic_block(alpha, rng, &mut a123);
                logistic_block(alpha, rng, &mut a345);
                logistic_block(alpha, rng, &mut a_all);
                row[0] = (W_PAIR * a12[0]).max(W_ONE * a123[0]).max(W_ONE * a_all[0]);
                row[1] = (W_PAIR * a12[1]).max(W_ONE * a123[1]).max(W_ONE * a_all[1]);
                row[2] = (W_THREE * a123[2])
                    .max(W_THREE * a345[0])
                    .max(W_ONE * a_all[2]);
                row[3] = (W_PAIR * a45[0]).max(W_ONE * a345[1]).max(W_ONE * a_all[3]);
                row[4] = (W_PAIR * a45[1]).max(W_ONE * a345[2]).max(W_ONE * a_all[4]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Exact,
    MonteCarlo { top: usize, draws: u64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistribution {
    pub pstar: ProbabilityVector,
    pub provenance: Provenance,
}

/// Versioned on-disk form of a reference distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFixture {
    pub version: u32,
    pub generator: GeneratorSpec,
    pub provenance: Provenance,
    pub entries: ProbabilityVector,
}

impl ReferenceFixture {
    pub const VERSION: u32 = 1;

    pub fn new(generator: GeneratorSpec, reference: ReferenceDistribution) -> Self {
        Self {
            version: Self::VERSION,
            generator,
            provenance: reference.provenance,
            entries: reference.pstar,
        }
    }

    pub fn reference(&self) -> ReferenceDistribution {
        ReferenceDistribution {
            pstar: self.entries.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fixture: Self = serde_json::from_str(text)?;
        if fixture.version != Self::VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported fixture version {}",
                fixture.version
            )));
        }
        Ok(fixture)
    }
}

/// Asymptotic independence: mass `1/d` on each axis.
pub fn reference_pstar_axes(d: usize) -> Result<ReferenceDistribution> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("d must be >= 2, got {d}")));
    }
    let masses = (0..d)
        .map(|i| (Cluster::singleton(i), 1.0 / d as f64))
        .collect();
    Ok(ReferenceDistribution {
        pstar: ProbabilityVector::new(masses)?,
        provenance: Provenance::Exact,
    })
}

/// Ratio of total draws to retained extremes.
pub const MONTE_CARLO_DRAW_RATIO: u64 = 1000;
/// Smallest accepted number of retained extremes.
pub const MONTE_CARLO_MIN_TOP: usize = 100_000;

/// Approximates `P(Z in C_beta)` by the cluster frequencies of the `top`
/// largest of `1000 * top` draws, projected at the `(top + 1)`-th norm.
pub fn monte_carlo_pstar(spec: &GeneratorSpec, top: usize) -> Result<ReferenceDistribution> {
    if top < MONTE_CARLO_MIN_TOP {
        return Err(Error::OutOfRange(format!(
            "need at least {MONTE_CARLO_MIN_TOP} retained extremes, got {top}"
        )));
    }
    let draws = (top as u64)
        .checked_mul(MONTE_CARLO_DRAW_RATIO)
        .ok_or_else(|| Error::OutOfRange("number of draws overflows".into()))?;
    spec.validate()?;
    let sampler = RowSampler::new(spec);
    monte_carlo_reference(
        spec.d,
        |rng, row| sampler.fill(rng, row),
        spec.seed,
        top,
        draws,
    )
}

const MC_CHUNK: u64 = 1 << 16;

/// Monte-Carlo reference for an arbitrary row sampler of dimension `d`.
/// Chunk `c` of the draws uses stream `(c, COMPONENT_REFERENCE)`.
pub fn monte_carlo_reference<F>(
    d: usize,
    fill: F,
    seed: u64,
    top: usize,
    draws: u64,
) -> Result<ReferenceDistribution>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    if top == 0 || draws <= top as u64 {
        return Err(Error::OutOfRange(format!(
            "need 0 < top < draws, got {top} of {draws}"
        )));
    }
    let chunks = draws.div_ceil(MC_CHUNK);
    if chunks >= 1 << 56 {
        return Err(Error::OutOfRange("too many draws".into()));
    }
    let keep = top + 1;
    let best = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c, COMPONENT_REFERENCE);
            let rows = MC_CHUNK.min(draws - c * MC_CHUNK) as usize;
            let mut acc = TopRows::new(d, keep);
            let mut row = vec![0.0; d];
            for _ in 0..rows {
                fill(&mut rng, &mut row);
                acc.push(&row);
            }
            acc.finish()
        })
        .reduce(|| TopRows::new(d, keep), TopRows::merge);

    let mut best = best.finish();
    let ranked = best.ranked();
    let threshold = best.norms[ranked[top]];
    if !(threshold > 0.0) {
        return Err(Error::Degenerate("reference threshold is zero".into()));
    }
    let mut projector = Projector::new(stream_rng(seed, 0, COMPONENT_REFERENCE));
    let mut tally: HashMap<Cluster, u64> = HashMap::new();
    let mut exceedances = 0u64;
    for &i in &ranked[..top] {
        if best.norms[i] > threshold {
            let cluster = projector.support(best.row(i), threshold)?;
            *tally.entry(cluster).or_default() += 1;
            exceedances += 1;
        }
    }
    best.rows.clear();
    let pstar = ProbabilityVector::from_weights(
        tally
            .into_iter()
            .map(|(c, t)| (c, t as f64 / exceedances as f64)),
    )?;
    Ok(ReferenceDistribution {
        pstar,
        provenance: Provenance::MonteCarlo { top, draws, seed },
    })
}

/// Bounded pool of the rows with the largest l1 norms.
struct TopRows {
    d: usize,
    keep: usize,
    norms: Vec<f64>,
    rows: Vec<f64>,
}

impl TopRows {
    fn new(d: usize, keep: usize) -> Self {
        Self {
            d,
            keep,
            norms: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    fn push(&mut self, row: &[f64]) {
        self.norms.push(row.iter().sum());
        self.rows.extend_from_slice(row);
        if self.norms.len() >= 2 * self.keep.max(1024) {
            self.prune();
        }
    }

    /// Indices sorted by decreasing norm.
    fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.norms.len()).collect();
        idx.sort_unstable_by(|&a, &b| self.norms[b].total_cmp(&self.norms[a]).then(a.cmp(&b)));
        idx
    }

    fn prune(&mut self) {
        if self.norms.len() <= self.keep {
            return;
        }
        let mut idx: Vec<usize> = (0..self.norms.len()).collect();
        idx.select_nth_unstable_by(self.keep - 1, |&a, &b| {
            self.norms[b].total_cmp(&self.norms[a]).then(a.cmp(&b))
        });
        idx.truncate(self.keep);
        idx.sort_unstable();
        let norms = idx.iter().map(|&i| self.norms[i]).collect();
        let rows = idx.iter().flat_map(|&i| self.row(i).to_vec()).collect();
        self.norms = norms;
        self.rows = rows;
    }

    fn finish(mut self) -> Self {
        self.prune();
        self
    }

    fn merge(mut self, other: Self) -> Self {
        self.norms.extend(other.norms);
        self.rows.extend(other.rows);
        self.prune();
        self
    }
}

/// Hellinger distance between probability vectors given as raw masses.
/// Inputs must sum to one within `1e-6`.
pub fn hellinger_masses(p: &BTreeMap<Cluster, f64>, q: &BTreeMap<Cluster, f64>) -> Result<f64> {
    check_normalized(p, 1e-6)?;
    check_normalized(q, 1e-6)?;
    let union: BTreeSet<&Cluster> = p.keys().chain(q.keys()).collect();
    let terms = union.into_iter().map(|c| {
        let pc = p.get(c).copied().unwrap_or(0.0);
        let qc = q.get(c).copied().unwrap_or(0.0);
        (pc.sqrt() - qc.sqrt()).powi(2)
    });
    // order-independent sum keeps the distance exactly symmetric
    let total = exact_sum(terms);
    Ok((0.5 * total).sqrt().clamp(0.0, 1.0))
}

/// `h(p, q) = (sum (sqrt p - sqrt q)^2 / 2)^(1/2)` over the union of supports.
pub fn hellinger(p: &ProbabilityVector, q: &ProbabilityVector) -> f64 {
    hellinger_masses(p.masses(), q.masses()).expect("probability vectors are normalized")
}

/// Multinomial draw with `k` trials, by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(k: u64, probs: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidInput(
            "probabilities must be nonnegative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("probabilities sum to {total}")));
    }
    let mut remaining = k;
    let mut mass_left = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        let draw = if i + 1 == probs.len() {
            remaining
        } else if remaining == 0 || p == 0.0 {
            0
        } else {
            let cond = (p / mass_left).clamp(0.0, 1.0);
            Binomial::new(remaining, cond)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .sample(rng)
        };
        out.push(draw);
        remaining -= draw;
        mass_left -= p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(ix: &[usize]) -> Cluster {
        Cluster::from_indices(ix.iter().copied()).unwrap()
    }

    fn pv(entries: &[(&[usize], f64)]) -> ProbabilityVector {
        ProbabilityVector::new(entries.iter().map(|(ix, p)| (c(ix), *p)).collect()).unwrap()
    }

    #[test]
    fn hellinger_examples() {
        let p = pv(&[(&[0], 0.3), (&[1], 0.7)]);
        assert_eq!(hellinger(&p, &p), 0.0);
        let q = pv(&[(&[2], 1.0)]);
        assert!((hellinger(&p, &q) - 1.0).abs() < 1e-15);
        let a = pv(&[(&[0], 1.0)]);
        let b = pv(&[(&[0], 0.5), (&[1], 0.5)]);
        let expected = (1.0 - FRAC_1_SQRT_2).sqrt();
        assert!((hellinger(&a, &b) - expected).abs() < 1e-12);
        assert!((hellinger(&a, &b) - 0.541196).abs() < 1e-6);
        assert_eq!(hellinger(&a, &b), hellinger(&b, &a));
    }

    #[test]
    fn hellinger_rejects_unnormalized() {
        let mut p = BTreeMap::new();
        p.insert(c(&[0]), 0.9);
        let mut q = BTreeMap::new();
        q.insert(c(&[0]), 1.0);
        assert!(matches!(
            hellinger_masses(&p, &q),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn axes_reference() {
        let r = reference_pstar_axes(2).unwrap();
        assert_eq!(r.pstar.get(&c(&[0])), 0.5);
        assert_eq!(r.pstar.get(&c(&[1])), 0.5);
        let r = reference_pstar_axes(40).unwrap();
        assert_eq!(r.pstar.len(), 40);
        assert!((r.pstar.masses().values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.pstar.masses().values().all(|&p| p == 1.0 / 40.0));
        assert!(reference_pstar_axes(1).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(GeneratorSpec::gaussian_copula_pareto(3, 1.0, 1)
            .validate()
            .is_err());
        assert!(GeneratorSpec::gaussian_copula_pareto(1, 0.0, 1)
            .validate()
            .is_err());
        assert!(GeneratorSpec::max_mixture(0.5, 1.0, 1).validate().is_err());
        assert!(GeneratorSpec::max_mixture(0.5, 0.0, 1).validate().is_err());
        let mut spec = GeneratorSpec::max_mixture(0.5, 0.5, 1);
        spec.d = 4;
        assert!(spec.validate().is_err());
        assert!(gen_max_mixture(&GeneratorSpec::gaussian_copula_pareto(3, 0.0, 1), 10).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = GeneratorSpec::gaussian_copula_pareto(4, 0.3, 11);
        assert_eq!(
            gen_gaussian_copula_pareto(&spec, 200).unwrap(),
            gen_gaussian_copula_pareto(&spec, 200).unwrap()
        );
        let spec = GeneratorSpec::max_mixture(0.5, 0.5, 11);
        let a = gen_max_mixture(&spec, 200).unwrap();
        assert_eq!(a, gen_max_mixture(&spec, 200).unwrap());
        assert_ne!(a, spec.sample(200, 1).unwrap());
    }

    #[test]
    fn streams_are_distinct() {
        let a: u64 = stream_rng(1, 0, 0).random();
        let b: u64 = stream_rng(1, 0, 1).random();
        let c: u64 = stream_rng(1, 1, 0).random();
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn multinomial_draws_sum_to_k() {
        let mut rng = stream_rng(3, 0, COMPONENT_MULTINOMIAL);
        for _ in 0..50 {
            let draw = sample_multinomial(500, &[0.5, 0.25, 0.0, 0.25], &mut rng).unwrap();
            assert_eq!(draw.iter().sum::<u64>(), 500);
            assert_eq!(draw[2], 0);
        }
        assert!(sample_multinomial(5, &[0.5, 0.4], &mut rng).is_err());
    }

    #[test]
    fn monte_carlo_guards() {
        let spec = GeneratorSpec::gaussian_copula_pareto(3, 0.0, 1);
        assert!(matches!(
            monte_carlo_pstar(&spec, 10),
            Err(Error::OutOfRange(_))
        ));
        assert!(monte_carlo_reference(2, |_, _| {}, 1, 10, 5).is_err());
    }

    #[test]
    fn top_rows_keeps_largest() {
        let mut acc = TopRows::new(1, 3);
        for x in [5.0, 1.0, 9.0, 3.0, 7.0] {
            acc.push(&[x]);
        }
        let acc = acc.finish();
        let mut kept = acc.norms.clone();
        kept.sort_by(f64::total_cmp);
        assert_eq!(kept, vec![5.0, 7.0, 9.0]);
    }
}
