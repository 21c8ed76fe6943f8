//! End-to-end experiments: model setup, sampling, diagnostics and output files.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chain::ChainTrace;
use crate::delayed::{OrderKind, OrderPolicy};
use crate::diagnostics::{relative_gain, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::models::logistic::{default_beta, simulate_logistic};
use crate::models::mixture::{simulate_mixture_from, ScaleConvention};
use crate::models::{
    BetaBinomialModel, LogisticData, LogisticModel, MixtureModel, MixtureParams, Model, NormalNormalModel,
    Quadrature,
};
use crate::prefetch::{BranchKind, BranchPolicy};
use crate::sampler::{Algorithm, PrefetchConfig, RunFailure, RunOutput, Sampler, SamplerConfig};
use crate::schedule::RandomnessSchedule;

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    NormalNormal,
    BetaBinomial,
    Logistic,
    Mixture,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlgoVariant {
    #[serde(rename = "mh")]
    Mh,
    #[default]
    #[serde(rename = "da")]
    Da,
    #[serde(rename = "mh+prefetch")]
    MhPrefetch,
    #[serde(rename = "da+prefetch")]
    DaPrefetch,
}

impl AlgoVariant {
    pub fn algorithm(self) -> Algorithm {
        match self {
            Self::Mh | Self::MhPrefetch => Algorithm::Mh,
            Self::Da | Self::DaPrefetch => Algorithm::Da,
        }
    }

    pub fn prefetch(self) -> bool {
        matches!(self, Self::MhPrefetch | Self::DaPrefetch)
    }

    pub fn with_prefetch(self, on: bool) -> Self {
        match (self.algorithm(), on) {
            (Algorithm::Mh, false) => Self::Mh,
            (Algorithm::Mh, true) => Self::MhPrefetch,
            (Algorithm::Da, false) => Self::Da,
            (Algorithm::Da, true) => Self::DaPrefetch,
        }
    }
}

/// Parses the kebab-case value names used in config files.
fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::InvalidArgument(format!("unknown value '{s}'")))
}

macro_rules! kebab_from_str {
    ($($t:ty),*) => {$(
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                parse_enum(s)
            }
        }
    )*};
}
kebab_from_str!(ModelKind, AlgoVariant, BranchKind, OrderKind, ScaleConvention);

impl fmt::Display for AlgoVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        write!(f, "{}", v.as_str().unwrap_or("?"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub algo: AlgoVariant,
    pub iters: u64,
    pub burnin: u64,
    pub seed: u64,
    /// Seed for simulated datasets; defaults to `seed`.
    pub data_seed: Option<u64>,
    pub workers: usize,
    /// Fraction of observations in the cheap (logistic) or prior-paired (mixture) block.
    pub split_r: Option<f64>,
    pub parts: usize,
    pub cost_c: u64,
    pub policy: BranchKind,
    pub beta_cap: f64,
    pub order_policy: OrderKind,
    pub refresh_every: u64,
    pub thin: u64,
    pub adapt: bool,
    /// Observations simulated when no dataset is given.
    pub n_obs: usize,
    /// Covariates of simulated logistic data.
    pub covariates: usize,
    pub scale_convention: ScaleConvention,
    /// Overrides the model's documented random-walk scale.
    pub proposal_scale: Option<f64>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::NormalNormal,
            algo: AlgoVariant::Da,
            iters: 10_000,
            burnin: 1_000,
            seed: 1,
            data_seed: None,
            workers: 1,
            split_r: None,
            parts: 100,
            cost_c: 0,
            policy: BranchKind::ObservedRate,
            beta_cap: 0.9,
            order_policy: OrderKind::Fixed,
            refresh_every: 100,
            thin: 1,
            adapt: false,
            n_obs: 1000,
            covariates: 5,
            scale_convention: ScaleConvention::Variance,
            proposal_scale: None,
            data: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Default cheap-block fraction for the logistic model.
pub const LOGISTIC_SPLIT_R: f64 = 0.1;
/// Default prior-paired block fraction for the mixture model.
pub const MIXTURE_SPLIT_R: f64 = 0.02;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config file: {e}")))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.iters == 0 {
            return bad("iters must be > 0".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.thin == 0 || self.refresh_every == 0 || self.parts == 0 {
            return bad("thin, refresh_every and parts must be >= 1".into());
        }
        if !(self.beta_cap > 0.0 && self.beta_cap <= 1.0) {
            return bad(format!("beta_cap {} outside (0, 1]", self.beta_cap));
        }
        if let Some(r) = self.split_r {
            if !(r > 0.0 && r < 1.0) {
                return bad(format!("split_r {r} outside (0, 1)"));
            }
        }
        if self.algo.prefetch() && self.policy.needs_surrogate() && self.model != ModelKind::Logistic {
            return bad(format!(
                "policy {:?} needs a cheap surrogate, which only the logistic model provides",
                self.policy
            ));
        }
        if self.data.is_some() && !matches!(self.model, ModelKind::Logistic | ModelKind::Mixture) {
            return bad("--data applies to the logistic and mixture models only".into());
        }
        Ok(())
    }

    fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn build_model(&self) -> Result<Box<dyn Model>> {
        Ok(match self.model {
            ModelKind::NormalNormal => {
                let mut m = NormalNormalModel::default();
                if let Some(s) = self.proposal_scale {
                    m.proposal_sd = s;
                }
                Box::new(m)
            }
            ModelKind::BetaBinomial => {
                let mut m = BetaBinomialModel::new(100, 32, 7.5, 0.5, self.parts)?;
                if let Some(s) = self.proposal_scale {
                    m.proposal_sd = s;
                }
                Box::new(m)
            }
            ModelKind::Logistic => {
                let data = match &self.data {
                    Some(path) => LogisticData::from_csv(path)?,
                    None => simulate_logistic(
                        self.n_obs,
                        self.covariates,
                        &default_beta(self.covariates),
                        self.data_seed(),
                    )?,
                };
                let mut m = LogisticModel::new(data, self.cost_c, self.split_r.unwrap_or(LOGISTIC_SPLIT_R))?;
                if let Some(s) = self.proposal_scale {
                    m.proposal_scale = s;
                }
                Box::new(m)
            }
            ModelKind::Mixture => {
                let truth = MixtureParams::reference(self.scale_convention);
                let data = match &self.data {
                    Some(path) => read_column(path)?,
                    None => simulate_mixture_from(&truth, self.n_obs, self.data_seed())?,
                };
                let mut m = MixtureModel::new(data, truth, Quadrature::default())?
                    .with_head_fraction(self.split_r.unwrap_or(MIXTURE_SPLIT_R))?;
                if let Some(s) = self.proposal_scale {
                    m.proposal_factor = s;
                }
                Box::new(m)
            }
        })
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig {
            algorithm: self.algo.algorithm(),
            prefetch: self.algo.prefetch().then(|| PrefetchConfig {
                workers: self.workers,
                policy: BranchPolicy::of_kind(self.policy, self.beta_cap),
            }),
            burnin: self.burnin,
            iterations: self.iters,
            thin: self.thin,
            order: OrderPolicy::new(self.order_policy, self.refresh_every)?,
            adapt: self.adapt,
        })
    }
}

/// First column of a headed CSV as numbers.
fn read_column(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("");
        out.push(
            field
                .parse()
                .map_err(|_| Error::Data(format!("row {}: cannot parse '{field}'", i + 1)))?,
        );
    }
    Ok(out)
}

/// Builds the model and runs the configured sampler.
pub fn execute(config: &ExperimentConfig) -> Result<std::result::Result<RunOutput, RunFailure>> {
    config.validate()?;
    let model = config.build_model()?;
    let target = model.target()?;
    let kernel = model.default_kernel()?;
    let schedule = RandomnessSchedule::new(config.seed, target.dimension(), target.len())?;
    let sampler = Sampler::new(&target, kernel, &schedule, config.sampler_config()?)?;
    Ok(sampler.run(model.initial_state()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub version: String,
    pub model: ModelKind,
    pub report: DiagnosticsReport,
    pub config: ExperimentConfig,
}

impl ReportFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ReportFile,
    pub samples_path: PathBuf,
    pub report_path: PathBuf,
}

pub fn write_samples(path: &Path, trace: &ChainTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let d = trace.states.first().map_or(0, |s| s.len());
    let mut header = vec!["iter".to_string()];
    header.extend((0..d).map(|j| format!("param_{j}")));
    header.extend(["accepted".to_string(), "stage".to_string()]);
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(d + 3);
    for (i, (state, meta)) in trace.states.iter().zip(&trace.meta).enumerate() {
        row.clear();
        row.push(i.to_string());
        row.extend(state.iter().map(|v| v.to_string()));
        row.push(u8::from(meta.accepted).to_string());
        row.push(meta.stage.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one experiment and writes `samples.csv` and `report.json` under `config.out`.
/// On an evaluation failure the partial samples are still written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(&config.out)?;
    let samples_path = config.out.join("samples.csv");
    let report_path = config.out.join("report.json");
    let output = match execute(config)? {
        Ok(o) => o,
        Err(failure) => {
            write_samples(&samples_path, &failure.partial)?;
            return Err(failure.error);
        }
    };
    write_samples(&samples_path, &output.trace)?;
    let report = ReportFile {
        version: VERSION.to_string(),
        model: config.model,
        report: DiagnosticsReport::from_run(&output.trace, &output.stats)?,
        config: config.clone(),
    };
    let mut f = BufWriter::new(File::create(&report_path)?);
    serde_json::to_writer_pretty(&mut f, &report)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(ExperimentOutcome {
        report,
        samples_path,
        report_path,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rg: f64,
    pub ess_da: f64,
    pub t_da: f64,
    pub ess_mh: f64,
    pub t_mh: f64,
}

impl Comparison {
    pub fn header() -> &'static str {
        "rg,ess_da,t_da,ess_mh,t_mh,verdict"
    }

    pub fn row(&self) -> String {
        let verdict = if self.rg > 1.0 { "gain" } else { "no-gain" };
        format!(
            "{:.4},{:.2},{:.4},{:.2},{:.4},{verdict}",
            self.rg, self.ess_da, self.t_da, self.ess_mh, self.t_mh
        )
    }
}

pub fn compare(report_da: &ReportFile, report_mh: &ReportFile) -> Result<Comparison> {
    if report_da.model != report_mh.model {
        return Err(Error::InvalidArgument(format!(
            "reports come from different models ({:?} vs {:?})",
            report_da.model, report_mh.model
        )));
    }
    let (a, b) = (&report_da.report, &report_mh.report);
    Ok(Comparison {
        rg: relative_gain(a.ess, a.wall_seconds, b.ess, b.wall_seconds)?,
        ess_da: a.ess,
        t_da: a.wall_seconds,
        ess_mh: b.ess,
        t_mh: b.wall_seconds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub cost_c: u64,
    pub workers: usize,
    pub rg: f64,
    pub ess_da: f64,
    pub ess_mh: f64,
    pub t_da: f64,
    pub t_mh: f64,
    pub draws_da: f64,
    pub draws_mh: f64,
}

fn run_report(config: &ExperimentConfig) -> Result<DiagnosticsReport> {
    let out = execute(config)?.map_err(|f| f.error)?;
    DiagnosticsReport::from_run(&out.trace, &out.stats)
}

/// RG over a `cost_C x workers` grid. The template's algorithm family is
/// ignored: each cell runs DA and MH, both prefetched when `workers > 1`.
pub fn bench_sweep(template: &ExperimentConfig, costs: &[u64], workers: &[usize]) -> Result<Vec<BenchRow>> {
    if costs.is_empty() || workers.is_empty() {
        return Err(Error::InvalidArgument("bench axes must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(costs.len() * workers.len());
    for &cost_c in costs {
        for &w in workers {
            let cell = |algo: AlgoVariant| ExperimentConfig {
                cost_c,
                workers: w,
                algo: algo.with_prefetch(w > 1),
                ..template.clone()
            };
            let da = run_report(&cell(AlgoVariant::Da));
            let mh = run_report(&cell(AlgoVariant::Mh));
            rows.push(match (da, mh) {
                (Ok(da), Ok(mh)) => BenchRow {
                    cost_c,
                    workers: w,
                    rg: relative_gain(da.ess, da.wall_seconds, mh.ess, mh.wall_seconds).unwrap_or(f64::NAN),
                    ess_da: da.ess,
                    ess_mh: mh.ess,
                    t_da: da.wall_seconds,
                    t_mh: mh.wall_seconds,
                    draws_da: da.draws_per_iteration,
                    draws_mh: mh.draws_per_iteration,
                },
                _ => BenchRow {
                    cost_c,
                    workers: w,
                    rg: f64::NAN,
                    ess_da: f64::NAN,
                    ess_mh: f64::NAN,
                    t_da: f64::NAN,
                    t_mh: f64::NAN,
                    draws_da: f64::NAN,
                    draws_mh: f64::NAN,
                },
            });
        }
    }
    Ok(rows)
}

pub fn write_bench(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enum_names() {
        assert_eq!("da+prefetch".parse::<AlgoVariant>().unwrap(), AlgoVariant::DaPrefetch);
        assert_eq!("beta-binomial".parse::<ModelKind>().unwrap(), ModelKind::BetaBinomial);
        assert_eq!("capped-approx".parse::<BranchKind>().unwrap(), BranchKind::CappedApprox);
        assert_eq!("by-success-rate".parse::<OrderKind>().unwrap(), OrderKind::BySuccessRate);
        assert!("bogus".parse::<AlgoVariant>().is_err());
        assert_eq!(AlgoVariant::MhPrefetch.to_string(), "mh+prefetch");
    }

    #[test]
    fn toml_keys_match_fields() {
        let cfg = ExperimentConfig::from_toml_str(
            "model = \"logistic\"\nalgo = \"da+prefetch\"\niters = 50\nsplit_r = 0.2\ncost_c = 7\npolicy = \"capped-approx\"\n",
        )
        .unwrap();
        assert_eq!(cfg.model, ModelKind::Logistic);
        assert_eq!(cfg.algo, AlgoVariant::DaPrefetch);
        assert_eq!(cfg.split_r, Some(0.2));
        assert_eq!(cfg.cost_c, 7);
        assert!(ExperimentConfig::from_toml_str("nope = 1").is_err());
    }

    #[test]
    fn validation() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ExperimentConfig { iters: 0, ..ok.clone() },
            ExperimentConfig { workers: 0, ..ok.clone() },
            ExperimentConfig { split_r: Some(1.5), ..ok.clone() },
            ExperimentConfig {
                algo: AlgoVariant::DaPrefetch,
                policy: BranchKind::ApproxRatio,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    fn report(model: ModelKind, ess: f64, t: f64) -> ReportFile {
        ReportFile {
            version: VERSION.into(),
            model,
            report: DiagnosticsReport {
                ess,
                tau: 1.0,
                relative_ess: 1.0,
                samples: 10,
                acceptance_rate: 0.5,
                wall_seconds: t,
                draws_per_iteration: 1.0,
                cheap_evals: 0,
                expensive_evals: 0,
                rg: None,
            },
            config: ExperimentConfig::default(),
        }
    }

    #[test]
    fn compare_examples() {
        let a = report(ModelKind::Logistic, 100.0, 2.0);
        assert_eq!(compare(&a, &a).unwrap().rg, 1.0);
        assert!(compare(&a, &report(ModelKind::Mixture, 100.0, 2.0)).is_err());
        assert!(compare(&a, &report(ModelKind::Logistic, 100.0, 0.0)).is_err());
    }

    #[test]
    fn one_by_one_bench_is_one_row() {
        let template = ExperimentConfig {
            iters: 2000,
            burnin: 100,
            ..Default::default()
        };
        let rows = bench_sweep(&template, &[0], &[1]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].rg.is_finite());
    }
}
