//! Replicated simulation experiments and their reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::denoise::{oracle_bayes, tweedie_denoise};
use crate::error::{NpmleError, Result};
use crate::metrics::mean_squared_error;
use crate::mixture::MixingMeasure;
use crate::solver::{fit, SolverConfig};
use crate::support::SupportStrategy;

use super::ari::adjusted_rand_index;
use super::cluster::{
    eb_cluster_assign, gap_statistic_with, kmeans, DEFAULT_GAP_K_MAX, DEFAULT_GAP_REFS, DEFAULT_RESTARTS,
};
use super::scenario::{generate, ScenarioKind, ScenarioSpec};

pub const DEFAULT_N_LIST: [usize; 3] = [300, 600, 900];
pub const DEFAULT_REPLICATES: usize = 50;
pub const FULL_N_LIST: [usize; 7] = [300, 600, 900, 1200, 1500, 1800, 2100];
pub const FULL_REPLICATES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Competitor {
    /// NPMLE plus Tweedie.
    EmpiricalBayes,
    /// Tweedie under the empirical measure of the latents.
    OracleBayes,
    /// k-means with the true number of parts.
    KMeansOracleK,
    /// k-means with k chosen by the gap statistic.
    KMeansGap,
}

impl Competitor {
    pub const ALL: [Competitor; 4] = [
        Competitor::EmpiricalBayes,
        Competitor::OracleBayes,
        Competitor::KMeansOracleK,
        Competitor::KMeansGap,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MseEbVsTruth,
    MseOracleVsTruth,
    MseEbVsOracle,
    MseKmeansOracleK,
    MseKmeansGap,
    AriEb,
    AriKmeansOracleK,
    AriKmeansGap,
    AriOracleBayes,
    GapK,
    EbAtoms,
    EbDualityGap,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MseEbVsTruth => "mse_eb_vs_truth",
            Metric::MseOracleVsTruth => "mse_oracle_vs_truth",
            Metric::MseEbVsOracle => "mse_eb_vs_oracle",
            Metric::MseKmeansOracleK => "mse_kmeans_oracle_k",
            Metric::MseKmeansGap => "mse_kmeans_gap",
            Metric::AriEb => "ari_eb",
            Metric::AriKmeansOracleK => "ari_kmeans_oracle_k",
            Metric::AriKmeansGap => "ari_kmeans_gap",
            Metric::AriOracleBayes => "ari_oracle_bayes",
            Metric::GapK => "gap_k",
            Metric::EbAtoms => "eb_atoms",
            Metric::EbDualityGap => "eb_duality_gap",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub support: SupportStrategy,
    pub solver: SolverConfig,
    pub methods: Vec<Competitor>,
    pub kmeans_restarts: usize,
    pub gap_refs: usize,
    pub gap_k_max: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            support: SupportStrategy::Exemplar,
            solver: SolverConfig::default(),
            methods: Competitor::ALL.to_vec(),
            kmeans_restarts: DEFAULT_RESTARTS,
            gap_refs: DEFAULT_GAP_REFS,
            gap_k_max: DEFAULT_GAP_K_MAX,
        }
    }
}

/// Metrics of one replicate, in [`Metric`] order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub values: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub metric: &'static str,
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub n_list: Vec<usize>,
    pub n_replicates: usize,
    pub seed: u64,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<CellSummary>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `r` at sample size `n`.
pub fn replicate_seed(seed: u64, n: usize, r: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ n as u64) ^ r as u64)
}

fn tag(err: NpmleError, n: usize, r: usize) -> NpmleError {
    let at = format!("n = {n}, replicate = {r}");
    match err {
        NpmleError::Numerical(m) => NpmleError::Numerical(format!("{m} ({at})")),
        NpmleError::Underflow { index, detail } => NpmleError::Underflow {
            index,
            detail: format!("{detail} ({at})"),
        },
        NpmleError::Contract(m) => NpmleError::Contract(format!("{m} ({at})")),
        NpmleError::Config(m) => NpmleError::Config(format!("{m} ({at})")),
        NpmleError::Data(m) => NpmleError::Data(format!("{m} ({at})")),
        other => other,
    }
}

/// Runs one replicate and returns its metrics.
pub fn run_replicate(kind: &ScenarioKind, n: usize, seed: u64, cfg: &ExperimentConfig) -> Result<BTreeMap<Metric, f64>> {
    let scenario = generate(&ScenarioSpec {
        kind: kind.clone(),
        n,
        seed,
    })?;
    let has = |m: Competitor| cfg.methods.contains(&m);
    let mut out = BTreeMap::new();
    let data = &scenario.data;
    let latents = &scenario.latents;

    let eb = if has(Competitor::EmpiricalBayes) {
        let fitted = fit(data, cfg.support, &cfg.solver)?;
        let est = tweedie_denoise(&fitted.mixture, data, None)?.estimates;
        out.insert(Metric::MseEbVsTruth, mean_squared_error(&est, latents)?);
        out.insert(Metric::AriEb, adjusted_rand_index(&eb_cluster_assign(&fitted.mixture, data)?, &scenario.labels)?);
        out.insert(Metric::EbAtoms, fitted.mixture.len() as f64);
        out.insert(Metric::EbDualityGap, fitted.duality_gap);
        Some(est)
    } else {
        None
    };
    if has(Competitor::OracleBayes) {
        let prior = MixingMeasure::empirical(latents)?;
        let est = oracle_bayes(&prior, data)?;
        out.insert(Metric::MseOracleVsTruth, mean_squared_error(&est, latents)?);
        out.insert(Metric::AriOracleBayes, adjusted_rand_index(&eb_cluster_assign(&prior, data)?, &scenario.labels)?);
        if let Some(eb) = &eb {
            out.insert(Metric::MseEbVsOracle, mean_squared_error(eb, &est)?);
        }
    }
    if has(Competitor::KMeansOracleK) {
        let k = kind.true_k().min(n);
        let km = kmeans(data, k, cfg.kmeans_restarts, splitmix64(seed ^ 0x6b6d))?;
        out.insert(Metric::MseKmeansOracleK, mean_squared_error(&km.fitted(), latents)?);
        out.insert(Metric::AriKmeansOracleK, adjusted_rand_index(&km.labels, &scenario.labels)?);
    }
    if has(Competitor::KMeansGap) {
        let gap = gap_statistic_with(data, cfg.gap_k_max, cfg.gap_refs, cfg.kmeans_restarts, splitmix64(seed ^ 0x6761))?;
        out.insert(Metric::MseKmeansGap, mean_squared_error(&gap.clustering.fitted(), latents)?);
        out.insert(Metric::AriKmeansGap, adjusted_rand_index(&gap.clustering.labels, &scenario.labels)?);
        out.insert(Metric::GapK, gap.k as f64);
    }
    Ok(out)
}

/// Runs `n_replicates` replicates at each sample size, in parallel, and
/// aggregates in `(n, replicate)` order.
pub fn run_experiment(
    kind: &ScenarioKind,
    n_list: &[usize],
    n_replicates: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    if n_replicates == 0 || n_list.is_empty() {
        return Err(NpmleError::config("need at least one sample size and one replicate"));
    }
    if let Some(&n) = n_list.iter().find(|&&n| n == 0) {
        return Err(NpmleError::config(format!("sample sizes must be positive, got {n}")));
    }
    let cells: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..n_replicates).map(move |r| (n, r)))
        .collect();
    let records: Vec<ReplicateRecord> = cells
        .par_iter()
        .map(|&(n, r)| {
            let s = replicate_seed(seed, n, r);
            run_replicate(kind, n, s, cfg)
                .map(|values| ReplicateRecord {
                    n,
                    replicate: r,
                    seed: s,
                    values,
                })
                .map_err(|e| tag(e, n, r))
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentReport {
        scenario: kind.name().to_string(),
        n_list: n_list.to_vec(),
        n_replicates,
        seed,
        summary: summarize(n_list, &records),
        records,
    })
}

fn summarize(n_list: &[usize], records: &[ReplicateRecord]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for &n in n_list {
        let mut by_metric: BTreeMap<Metric, Vec<f64>> = BTreeMap::new();
        for rec in records.iter().filter(|r| r.n == n) {
            for (&m, &v) in &rec.values {
                by_metric.entry(m).or_default().push(v);
            }
        }
        for (m, vals) in by_metric {
            let count = vals.len();
            let mean = vals.iter().sum::<f64>() / count as f64;
            let std_error = if count > 1 {
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            out.push(CellSummary {
                n,
                metric: m.name(),
                mean,
                std_error,
                count,
            });
        }
    }
    out
}

impl ExperimentReport {
    pub fn cell(&self, n: usize, metric: Metric) -> Option<&CellSummary> {
        self.summary.iter().find(|c| c.n == n && c.metric == metric.name())
    }

    /// Long-format CSV `scenario,n,replicate,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,n,replicate,metric,value\n");
        for rec in &self.records {
            for (m, v) in &rec.values {
                let _ = writeln!(s, "{},{},{},{},{:.16e}", self.scenario, rec.n, rec.replicate, m.name(), v);
            }
        }
        s
    }

    /// Aggregated means and standard errors as pretty-printed JSON.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
