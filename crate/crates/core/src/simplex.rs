//! Euclidean projection onto the scaled simplex `{w >= 0 : sum(w) = z}`.
//!
//! The projection of `v` is `w_i = max(v_i - eta, 0)` for the unique shift
//! `eta` with `sum_i max(v_i - eta, 0) = z`. [`project`] finds the support
//! with the randomized pivot partition (expected linear time); [`project_oracle`]
//! sorts. Both evaluate `eta` from the support with a correctly rounded sum,
//! so they agree bit for bit whenever they agree on the support.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::numeric::exact_sum;

/// A nonempty vector with nonnegative finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct NonnegVector(Vec<f64>);

impl NonnegVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_input(&values, 1.0)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point of the simplex scaled to total mass `scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    pub values: Vec<f64>,
    pub scale: f64,
}

impl SimplexPoint {
    pub fn new(values: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if values.is_empty() || values.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput(
                "simplex point needs nonnegative entries".into(),
            ));
        }
        let total: f64 = exact_sum(values.iter().copied());
        if (total - scale).abs() > 1e-9 * scale {
            return Err(Error::InvalidInput(format!(
                "entries sum to {total}, expected {scale}"
            )));
        }
        Ok(Self { values, scale })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn check_input(v: &[f64], z: f64) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector".into()));
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "scale z must be positive, got {z}"
        )));
    }
    if let Some(x) = v.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "entries must be finite and nonnegative, found {x}"
        )));
    }
    Ok(())
}

fn shift_from_support<I: IntoIterator<Item = f64>>(support: I, count: usize, z: f64) -> f64 {
    exact_sum(support.into_iter().chain(std::iter::once(-z))) / count as f64
}

fn clipped(v: &[f64], eta: f64, z: f64) -> SimplexPoint {
    SimplexPoint {
        values: v.iter().map(|&x| (x - eta).max(0.0)).collect(),
        scale: z,
    }
}

/// Reusable state for projecting many vectors: the pivot RNG and an index
/// buffer, so per-row projections do not allocate.
pub struct Projector<R> {
    rng: R,
    scratch: Vec<usize>,
}

impl<R: Rng> Projector<R> {
    pub fn new(rng: R) -> Self {
        Self {
            rng,
            scratch: Vec::new(),
        }
    }

    /// The shift `eta` of the projection of `v` onto the simplex of scale `z`.
    /// Inputs are assumed valid.
    pub fn shift(&mut self, v: &[f64], z: f64) -> f64 {
        let idx = &mut self.scratch;
        idx.clear();
        idx.extend(0..v.len());

        let (mut start, mut end) = (0usize, v.len());
        let mut s = 0.0;
        let mut rho = 0usize;
        let mut lowest_accepted = f64::INFINITY;

        while start < end {
            let pick = self.rng.random_range(start..end);
            idx.swap(start, pick);
            let pivot = v[idx[start]];

            // G = [start, split), pivot first; L = [split, end).
            let mut split = start + 1;
            let mut delta_s = pivot;
            for i in start + 1..end {
                let x = v[idx[i]];
                if x >= pivot {
                    idx.swap(i, split);
                    split += 1;
                    delta_s += x;
                }
            }
            let delta_rho = split - start;

            if (s + delta_s) - (rho + delta_rho) as f64 * pivot < z {
                s += delta_s;
                rho += delta_rho;
                lowest_accepted = pivot;
                start = split;
            } else {
                start += 1;
                end = split;
            }
        }

        // The accepted set is exactly {i : v_i >= lowest accepted pivot}.
        shift_from_support(v.iter().copied().filter(|&x| x >= lowest_accepted), rho, z)
    }

    /// Full projection of `v` onto the simplex of scale `z`.
    pub fn project(&mut self, v: &[f64], z: f64) -> Result<SimplexPoint> {
        check_input(v, z)?;
        let eta = self.shift(v, z);
        Ok(clipped(v, eta, z))
    }

    /// Support of the projection, without materializing the projected vector.
    pub fn support(&mut self, v: &[f64], z: f64) -> Result<Cluster> {
        let eta = self.shift(v, z);
        Cluster::from_mask(v.len(), |i| v[i] - eta > 0.0)
    }
}

/// Projects `v` onto `{w >= 0 : sum(w) = z}` with the randomized pivot
/// partition, drawing pivots from `rng`.
pub fn project<R: Rng + ?Sized>(v: &[f64], z: f64, rng: &mut R) -> Result<SimplexPoint> {
    Projector::new(rng).project(v, z)
}

/// Sort-based projection, `O(d log d)`.
pub fn project_oracle(v: &[f64], z: f64) -> Result<SimplexPoint> {
    check_input(v, z)?;
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumulative = 0.0;
    let mut rho = 1;
    for (j, &x) in sorted.iter().enumerate() {
        cumulative += x;
        if x - (cumulative - z) / (j + 1) as f64 > 0.0 {
            rho = j + 1;
        }
    }
    let eta = shift_from_support(sorted[..rho].iter().copied(), rho, z);
    Ok(clipped(v, eta, z))
}

/// The cluster `{i : w_i > tol * scale}` of the face containing `w`.
pub fn support_cluster(w: &SimplexPoint, tol: f64) -> Result<Cluster> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be nonnegative, got {tol}"
        )));
    }
    let cut = tol * w.scale;
    Cluster::from_mask(w.values.len(), |i| w.values[i] > cut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn c(ix: &[usize]) -> Cluster {
        Cluster::from_indices(ix.iter().copied()).unwrap()
    }

    #[test]
    fn projects_onto_axis() {
        let w = project(&[0.7, 2.3], 1.0, &mut rng()).unwrap();
        assert_close(&w.values, &[0.0, 1.0], 1e-12);
        assert_eq!(support_cluster(&w, 0.0).unwrap(), c(&[1]));
    }

    #[test]
    fn projects_into_interior() {
        let w = project(&[1.0, 1.3], 1.0, &mut rng()).unwrap();
        assert_close(&w.values, &[0.35, 0.65], 1e-12);
        assert_eq!(support_cluster(&w, 0.0).unwrap(), c(&[0, 1]));
    }

    #[test]
    fn point_on_simplex_is_fixed() {
        let w = project(&[0.5, 0.5], 1.0, &mut rng()).unwrap();
        assert_close(&w.values, &[0.5, 0.5], 1e-15);
        let w = project_oracle(&[1.0, 1.0, 1.0], 3.0).unwrap();
        assert_close(&w.values, &[1.0, 1.0, 1.0], 1e-15);
    }

    #[test]
    fn oracle_examples() {
        let w = project_oracle(&[0.4, 1.8], 1.0).unwrap();
        assert_close(&w.values, &[0.0, 1.0], 1e-12);
        let w = project_oracle(&[3.0, 2.0, 1.0], 1.0).unwrap();
        assert_close(&w.values, &[1.0, 0.0, 0.0], 1e-12);
    }

    #[test]
    fn support_examples() {
        let w = SimplexPoint::new(vec![0.5, 0.0, 0.5], 1.0).unwrap();
        assert_eq!(support_cluster(&w, 0.0).unwrap(), c(&[0, 2]));
        let w = SimplexPoint::new(vec![0.0, 1.0], 1.0).unwrap();
        assert_eq!(support_cluster(&w, 0.0).unwrap(), c(&[1]));
        assert!(matches!(support_cluster(&w, 2.0), Err(Error::EmptyCluster)));
    }

    #[test]
    fn small_norm_vectors_are_lifted() {
        // |v| <= z gives a nonpositive shift.
        let w = project(&[0.1, 0.2, 0.0], 1.0, &mut rng()).unwrap();
        let o = project_oracle(&[0.1, 0.2, 0.0], 1.0).unwrap();
        assert_eq!(w, o);
        assert!((w.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let w = project(&[0.0, 0.0], 2.0, &mut rng()).unwrap();
        assert_close(&w.values, &[1.0, 1.0], 1e-15);
    }

    #[test]
    fn ties_are_handled() {
        let v = [2.0, 2.0, 2.0, 0.5];
        let w = project(&v, 1.0, &mut rng()).unwrap();
        assert_eq!(w, project_oracle(&v, 1.0).unwrap());
        assert_close(&w.values, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0], 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            project(&[], 1.0, &mut rng()),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            project(&[1.0], 0.0, &mut rng()),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            project(&[1.0, -0.1], 1.0, &mut rng()),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            project_oracle(&[f64::NAN], 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(NonnegVector::new(vec![-1.0]).is_err());
        assert!(SimplexPoint::new(vec![0.5, 0.4], 1.0).is_err());
    }
}
