use muscle_core::simplex::{project, project_oracle, support_cluster, Projector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn entry() -> impl Strategy<Value = f64> {
    prop_oneof![
        0.0f64..1.0,
        (0.0f64..1.0).prop_map(|u| (1.0 - u).powf(-1.0)),
        Just(0.0),
        Just(1.0),
    ]
}

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(entry(), 1..50)
}

fn scale() -> impl Strategy<Value = f64> {
    prop_oneof![0.01f64..2.0, 1.0f64..200.0]
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn feasible(v in vector(), z in scale(), seed in any::<u64>()) {
        let w = project(&v, z, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(w.values.iter().all(|&x| x >= 0.0));
        let total: f64 = w.values.iter().sum();
        prop_assert!((total - z).abs() <= 1e-9 * z);
    }

    #[test]
    fn matches_sorting_oracle(v in vector(), z in scale(), seed in any::<u64>()) {
        let w = project(&v, z, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let o = project_oracle(&v, z).unwrap();
        prop_assert!(max_gap(&w.values, &o.values) <= 1e-12);
    }

    #[test]
    fn idempotent(v in vector(), z in scale(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = project(&v, z, &mut rng).unwrap();
        let ww = project(&w.values, z, &mut rng).unwrap();
        prop_assert!(max_gap(&w.values, &ww.values) <= 1e-12 * z.max(1.0));
    }

    #[test]
    fn preserves_order(v in vector(), z in scale(), seed in any::<u64>()) {
        let w = project(&v, z, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] >= v[j] {
                    prop_assert!(w.values[i] >= w.values[j]);
                }
            }
        }
    }

    #[test]
    fn zeros_nonincreasing_in_scale(v in vector(), z1 in scale(), z2 in scale()) {
        let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
        let zeros = |z| project_oracle(&v, z).unwrap().values.iter().filter(|&&x| x == 0.0).count();
        prop_assert!(zeros(hi) <= zeros(lo));
    }

    #[test]
    fn constant_shift_on_support(v in vector(), z in scale(), seed in any::<u64>()) {
        let w = project(&v, z, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let supp: Vec<usize> = (0..v.len()).filter(|&i| w.values[i] > 0.0).collect();
        for &i in &supp {
            for &j in &supp {
                let gap = (w.values[i] - w.values[j]) - (v[i] - v[j]);
                prop_assert!(gap.abs() <= 1e-12 * v[i].abs().max(v[j].abs()).max(1.0));
            }
        }
    }

    #[test]
    fn support_agrees_with_projection(v in vector(), z in scale(), seed in any::<u64>()) {
        let mut p = Projector::new(ChaCha8Rng::seed_from_u64(seed));
        let direct = p.support(&v, z).unwrap();
        let w = project_oracle(&v, z).unwrap();
        prop_assert_eq!(direct, support_cluster(&w, 0.0).unwrap());
    }

    #[test]
    fn pivot_sequence_irrelevant(v in vector(), z in scale(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = project(&v, z, &mut ChaCha8Rng::seed_from_u64(s1)).unwrap();
        let b = project(&v, z, &mut ChaCha8Rng::seed_from_u64(s2)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn scale_boundaries() {
    let v = [3.0, 1.0, 0.5];
    // l1 norm equal to the scale: already on the simplex
    let w = project_oracle(&v, 4.5).unwrap();
    assert_eq!(w.values, v.to_vec());
    // huge scale spreads the excess evenly
    let w = project_oracle(&v, 1e6).unwrap();
    let gaps = [w.values[0] - w.values[1], w.values[1] - w.values[2]];
    assert!((gaps[0] - 2.0).abs() < 1e-9 && (gaps[1] - 0.5).abs() < 1e-9);
}
