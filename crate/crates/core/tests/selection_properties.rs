use muscle_core::selection::{
    bias_select, log_likelihood_sorted, muscle, GridSpec, SelectionResult,
};
use muscle_core::stat_tests::{chi2_quantile, grouped_statistic};
use muscle_core::synthetic::{
    sample_multinomial, stream_rng, GeneratorSpec, COMPONENT_MULTINOMIAL,
};
use muscle_core::tail::{ClusterCounts, Sample};
use muscle_core::Cluster;
use proptest::prelude::*;

fn counts_from(sorted: &[u64]) -> ClusterCounts {
    let k: u64 = sorted.iter().sum();
    let tallies = sorted
        .iter()
        .enumerate()
        .map(|(i, &t)| (Cluster::singleton(i), t));
    ClusterCounts::from_tallies(tallies, k as usize, 1.0, 10 * k as usize + 10)
}

fn sorted_counts() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..500, 1..30).prop_map(|mut v| {
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    })
}

fn same_selection(a: &SelectionResult, b: &SelectionResult) -> bool {
    a.k_hat == b.k_hat
        && a.s_hat == b.s_hat
        && a.clusters == b.clusters
        && a.zeta == b.zeta
        && a.curve == b.curve
        && a.counts.entries() == b.counts.entries()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn incremental_and_direct_likelihoods_agree(t in sorted_counts()) {
        let (_, fits) = bias_select(&counts_from(&t)).unwrap();
        for fit in &fits {
            let direct = log_likelihood_sorted(&t, fit.s).unwrap();
            prop_assert!((fit.log_likelihood - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn criterion_steps_depend_on_head_and_tail_only(t in sorted_counts(), extra in 1u64..50) {
        // changing counts strictly inside the tail block, keeping its sum,
        // leaves the step between s and s+1 unchanged when s+1 < r
        prop_assume!(t.len() >= 4);
        let s = 1;
        let mut u = t.clone();
        let last = u.len() - 1;
        let moved = extra.min(u[last] - 1).min(u[s + 1].saturating_sub(u[s + 1 + 1..].iter().copied().max().unwrap_or(0)));
        prop_assume!(moved > 0);
        u[s + 1] -= moved;
        u[last] += moved;
        prop_assume!(u.windows(2).all(|w| w[0] >= w[1]));
        let step = |c: &[u64]| {
            let (_, fits) = bias_select(&counts_from(c)).unwrap();
            let base: f64 = c.iter().map(|&x| muscle_core::numeric::ln_factorial(x)).sum();
            // remove the multinomial coefficient, which is common to all s
            (fits[s - 1].bias_criterion + base) - (fits[s].bias_criterion + base)
        };
        let (a, b) = (step(&t), step(&u));
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn selected_model_is_the_minimum(t in sorted_counts()) {
        let (best, fits) = bias_select(&counts_from(&t)).unwrap();
        let min = fits.iter().map(|f| f.bias_criterion).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(fits[best - 1].bias_criterion, min);
        prop_assert!(fits[..best - 1].iter().all(|f| f.bias_criterion > min));
    }
}

fn grid() -> Vec<usize> {
    GridSpec {
        lo_frac: 0.01,
        hi_frac: 0.1,
        points: 12,
    }
    .levels(3000)
    .unwrap()
}

#[test]
fn row_order_is_irrelevant() {
    let spec = GeneratorSpec::max_mixture(0.5, 0.3, 8);
    let sample = spec.sample(3000, 0).unwrap();
    let d = sample.d();
    let mut rows: Vec<Vec<f64>> = sample.rows().map(<[f64]>::to_vec).collect();
    rows.reverse();
    rows.rotate_left(777);
    let shuffled = Sample::from_rows(&rows).unwrap();
    assert_eq!(shuffled.d(), d);
    let a = muscle(&sample, &grid()).unwrap();
    let b = muscle(&shuffled, &grid()).unwrap();
    assert!(same_selection(&a, &b));
}

#[test]
fn common_rescaling_is_irrelevant() {
    let sample = GeneratorSpec::gaussian_copula_pareto(6, 0.5, 3)
        .sample(3000, 0)
        .unwrap();
    let a = muscle(&sample, &grid()).unwrap();
    for c in [0.37, 2.0, 1234.5] {
        let scaled =
            Sample::from_flat(sample.as_flat().iter().map(|x| x * c).collect(), 6).unwrap();
        let b = muscle(&scaled, &grid()).unwrap();
        assert!(same_selection(&a, &b), "scale {c}");
    }
}

#[test]
fn zeta_on_selected_clusters() {
    let sample = GeneratorSpec::max_mixture(0.0, 0.5, 5)
        .sample(3000, 0)
        .unwrap();
    let sel = muscle(&sample, &grid()).unwrap();
    assert_eq!(sel.zeta.len(), sel.s_hat);
    assert_eq!(sel.clusters.len(), sel.s_hat);
    let total: f64 = sel.zeta.masses().values().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(sel.clusters.iter().all(|c| sel.zeta.get(c) > 0.0));
    assert_eq!(sel.curve.len(), grid().len());
}

/// Cells: three leading clusters, a block of three, a tail of exceedance
/// clusters, then all non-exceedances. Counts cover the whole sample.
fn grouped_draws(reps: u64) -> Vec<f64> {
    let k = 5000.0;
    let n = 100_000u64;
    let frac = k / n as f64;
    let spectral = [0.3, 0.2, 0.15, 0.08, 0.08, 0.08, 0.06, 0.05];
    let mut probs: Vec<f64> = spectral.iter().map(|p| p * frac).collect();
    probs.push(1.0 - frac);
    (0..reps)
        .map(|r| {
            let mut rng = stream_rng(515, r, COMPONENT_MULTINOMIAL);
            let counts = sample_multinomial(n, &probs, &mut rng).unwrap();
            grouped_statistic(&counts, &probs, 3, 6).unwrap()
        })
        .collect()
}

#[test]
fn grouped_statistic_behaves_like_chi_square() {
    let mut stats = grouped_draws(2000);
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    assert!((mean - 4.0).abs() <= 0.15 * 4.0, "mean {mean}");
    stats.sort_by(f64::total_cmp);
    let q95 = stats[(0.95 * stats.len() as f64) as usize - 1];
    let target = chi2_quantile(0.05, 4).unwrap();
    assert!((q95 / target - 1.0).abs() <= 0.10, "q95 {q95} vs {target}");
}
