//! Seeded replication driver: generate, select, score against a reference,
//! aggregate.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::selection::{muscle, CurvePoint, GridSpec};
use crate::synthetic::{hellinger, GeneratorKind, GeneratorSpec, ReferenceDistribution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: GeneratorKind,
    pub d: usize,
    pub rhos: Vec<f64>,
    /// Logistic parameters; ignored by the Gaussian-copula generator.
    #[serde(default)]
    pub alphas: Vec<f64>,
    pub n: usize,
    pub replications: usize,
    pub grid: GridSpec,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidInput(
                "at least one replication is required".into(),
            ));
        }
        if self.rhos.is_empty() {
            return Err(Error::InvalidInput("empty correlation grid".into()));
        }
        if self.kind == GeneratorKind::MaxMixture && self.alphas.is_empty() {
            return Err(Error::InvalidInput("empty logistic-parameter grid".into()));
        }
        if self.replications >= 1 << 24 || self.grid_points().len() >= 1 << 24 {
            return Err(Error::InvalidInput(
                "grid or replication count too large".into(),
            ));
        }
        self.grid.validate()?;
        for spec in self.grid_points() {
            spec.validate()?;
        }
        Ok(())
    }

    /// Generator specifications of the grid, rho-major.
    pub fn grid_points(&self) -> Vec<GeneratorSpec> {
        let mut specs = Vec::new();
        for &rho in &self.rhos {
            match self.kind {
                GeneratorKind::GaussianCopulaPareto => specs.push(
                    GeneratorSpec::gaussian_copula_pareto(self.d, rho, self.master_seed),
                ),
                GeneratorKind::MaxMixture => {
                    for &alpha in &self.alphas {
                        specs.push(GeneratorSpec::max_mixture(rho, alpha, self.master_seed));
                    }
                }
            }
        }
        specs
    }

    /// Named configurations. Desk presets keep runtimes to minutes; the full
    /// presets run the complete parameter grids.
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "independence-desk" => Self {
                kind: GeneratorKind::GaussianCopulaPareto,
                d: 10,
                rhos: vec![0.5],
                alphas: vec![],
                n: 10_000,
                replications: 10,
                grid: GridSpec::default(),
                master_seed: 2024,
            },
            "independence-full" => Self {
                kind: GeneratorKind::GaussianCopulaPareto,
                d: 40,
                rhos: vec![0.0, 0.25, 0.5, 0.75],
                alphas: vec![],
                n: 30_000,
                replications: 100,
                grid: GridSpec::default(),
                master_seed: 2024,
            },
            "max-mixture-desk" => Self {
                kind: GeneratorKind::MaxMixture,
                d: 5,
                rhos: vec![0.5],
                alphas: vec![0.5],
                n: 10_000,
                replications: 20,
                grid: GridSpec::default(),
                master_seed: 2024,
            },
            "max-mixture-full" => Self {
                kind: GeneratorKind::MaxMixture,
                d: 5,
                rhos: vec![0.0, 0.25, 0.5, 0.75],
                alphas: (1..=9).map(|i| i as f64 / 10.0).collect(),
                n: 10_000,
                replications: 100,
                grid: GridSpec::default(),
                master_seed: 2024,
            },
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown experiment preset `{other}`"
                )))
            }
        };
        Ok(cfg)
    }

    pub const PRESETS: [&'static str; 4] = [
        "independence-desk",
        "independence-full",
        "max-mixture-desk",
        "max-mixture-full",
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub k_hat: usize,
    pub k_effective: u64,
    pub s_hat: usize,
    pub clusters: Vec<Cluster>,
    pub hellinger: f64,
    pub curve: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub generator: GeneratorSpec,
    pub reference: ReferenceDistribution,
    pub mean_hellinger: f64,
    pub std_hellinger: f64,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<ReplicationFailure>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub per_config_seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub results: Vec<ConfigResult>,
    /// Wall-clock data, kept apart so the rest of the report is reproducible.
    pub timings: Timings,
}

impl ExperimentReport {
    /// JSON of everything except timings; identical for identical configs.
    pub fn results_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&(
            &self.config,
            &self.results,
        ))?)
    }
}

/// Sample mean and standard deviation (`n - 1` denominator; zero for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn replication_stream(grid_index: usize, replication: usize) -> u64 {
    ((grid_index as u64) << 24) | replication as u64
}

/// Runs every replication of every grid point. A failing replication is
/// recorded and left out of the aggregates.
pub fn run_experiment<F>(config: &ExperimentConfig, reference_for: F) -> Result<ExperimentReport>
where
    F: Fn(&GeneratorSpec) -> Result<ReferenceDistribution>,
{
    config.validate()?;
    let start = Instant::now();
    let levels = config.grid.levels(config.n)?;
    let mut results = Vec::new();
    let mut per_config_seconds = Vec::new();

    for (g, spec) in config.grid_points().into_iter().enumerate() {
        let t0 = Instant::now();
        let reference = reference_for(&spec)?;
        let outcomes: Vec<std::result::Result<ReplicationRecord, ReplicationFailure>> = (0..config
            .replications)
            .into_par_iter()
            .map(|r| {
                run_replication(
                    &spec,
                    config.n,
                    &levels,
                    &reference,
                    replication_stream(g, r),
                )
                .map(|mut rec| {
                    rec.replication = r;
                    rec
                })
                .map_err(|e| ReplicationFailure {
                    replication: r,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                })
            })
            .collect();

        let mut records = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(rec) => records.push(rec),
                Err(f) => {
                    log::warn!("replication {} failed: {}", f.replication, f.message);
                    failures.push(f);
                }
            }
        }
        let hs: Vec<f64> = records.iter().map(|r| r.hellinger).collect();
        let (mean_hellinger, std_hellinger) = mean_std(&hs);
        results.push(ConfigResult {
            generator: spec,
            reference,
            mean_hellinger,
            std_hellinger,
            records,
            failures,
        });
        per_config_seconds.push(t0.elapsed().as_secs_f64());
    }

    Ok(ExperimentReport {
        config: config.clone(),
        results,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
            per_config_seconds,
        },
    })
}

fn run_replication(
    spec: &GeneratorSpec,
    n: usize,
    levels: &[usize],
    reference: &ReferenceDistribution,
    stream: u64,
) -> Result<ReplicationRecord> {
    let sample = spec.sample(n, stream)?;
    let sel = muscle(&sample, levels)?;
    Ok(ReplicationRecord {
        replication: 0,
        k_hat: sel.k_hat,
        k_effective: sel.k_effective,
        s_hat: sel.s_hat,
        hellinger: hellinger(&reference.pstar, &sel.zeta),
        clusters: sel.clusters,
        curve: sel.curve,
    })
}

/// Fraction of the reference support found among the selected clusters,
/// averaged over successful replications.
pub fn recovery_rate(result: &ConfigResult, reference: &ReferenceDistribution) -> f64 {
    let support: Vec<&Cluster> = reference.pstar.support().collect();
    if support.is_empty() || result.records.is_empty() {
        return 0.0;
    }
    let per_rep = result.records.iter().map(|rec| {
        let hit = support.iter().filter(|c| rec.clusters.contains(c)).count();
        hit as f64 / support.len() as f64
    });
    per_rep.sum::<f64>() / result.records.len() as f64
}

/// One CSV row per (grid point, replication, level).
pub fn write_curves_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rho",
        "alpha",
        "replication",
        "k",
        "k_effective",
        "s_hat",
        "criterion",
    ])?;
    for res in &report.results {
        let alpha = res
            .generator
            .alpha_logistic
            .map(|a| a.to_string())
            .unwrap_or_default();
        for rec in &res.records {
            for p in &rec.curve {
                w.write_record([
                    res.generator.rho.to_string(),
                    alpha.clone(),
                    rec.replication.to_string(),
                    p.k.to_string(),
                    p.k_effective.to_string(),
                    p.s_hat.to_string(),
                    format!("{:.12e}", p.criterion),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::reference_pstar_axes;

    fn small(replications: usize) -> ExperimentConfig {
        ExperimentConfig {
            kind: GeneratorKind::GaussianCopulaPareto,
            d: 3,
            rhos: vec![0.0],
            alphas: vec![],
            n: 2000,
            replications,
            grid: GridSpec {
                lo_frac: 0.01,
                hi_frac: 0.05,
                points: 5,
            },
            master_seed: 9,
        }
    }

    #[test]
    fn single_replication_report() {
        let cfg = small(1);
        let report = run_experiment(&cfg, |s| reference_pstar_axes(s.d)).unwrap();
        let res = &report.results[0];
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.mean_hellinger, res.records[0].hellinger);
        assert_eq!(res.std_hellinger, 0.0);
    }

    #[test]
    fn aggregates_match_records() {
        let report = run_experiment(&small(4), |s| reference_pstar_axes(s.d)).unwrap();
        let res = &report.results[0];
        let hs: Vec<f64> = res.records.iter().map(|r| r.hellinger).collect();
        let (m, s) = mean_std(&hs);
        assert!((m - res.mean_hellinger).abs() < 1e-12);
        assert!((s - res.std_hellinger).abs() < 1e-12);
    }

    #[test]
    fn every_replication_accounted_for() {
        let mut cfg = small(2);
        cfg.n = 40;
        cfg.grid = GridSpec {
            lo_frac: 0.5,
            hi_frac: 0.9,
            points: 2,
        };
        let report = run_experiment(&cfg, |s| reference_pstar_axes(s.d)).unwrap();
        let res = &report.results[0];
        assert_eq!(res.records.len() + res.failures.len(), 2);
    }

    #[test]
    fn recovery_rate_bounds() {
        let reference = reference_pstar_axes(2).unwrap();
        let mut res = run_experiment(&small(1), |s| reference_pstar_axes(s.d))
            .unwrap()
            .results
            .remove(0);
        res.records[0].clusters = vec![Cluster::singleton(0), Cluster::singleton(1)];
        assert_eq!(recovery_rate(&res, &reference), 1.0);
        res.records[0].clusters = vec![Cluster::full(2)];
        assert_eq!(recovery_rate(&res, &reference), 0.0);
    }

    #[test]
    fn presets_validate() {
        for name in ExperimentConfig::PRESETS {
            ExperimentConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("nope").is_err());
        let mut cfg = small(1);
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
    }
}
