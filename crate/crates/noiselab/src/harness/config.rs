//! Experiment configs. TOML and JSON share one schema:
//!
//! ```toml
//! name = "fig7"
//! kind = "rate_sweep"
//! seeds = [0]
//!
//! [parameters]
//! mu1 = [0.0, 0.0]
//! mu2 = [2.0, 0.0]
//! sigma = 1.0
//! alpha_min = -1.0
//! alpha_max = 1.0
//! alpha_step = 0.05
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{BenchSetup, Corrector, ElrConfig, TrainConfig};
use crate::domain::{dot, norm2, DomainSpec, MIN_SIGMA};
use crate::error::{Error, Result};
use crate::etp::{GdConfig, GradForm};
use crate::losses::{LossKind, LossSpec};
use crate::noise::RegionRSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    RateSweep,
    RegionCheck,
    EtpRun,
    EtpGrid,
    BenchRun,
    BenchCompare,
    Memorization,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::RateSweep => "rate_sweep",
            Kind::RegionCheck => "region_check",
            Kind::EtpRun => "etp_run",
            Kind::EtpGrid => "etp_grid",
            Kind::BenchRun => "bench_run",
            Kind::BenchCompare => "bench_compare",
            Kind::Memorization => "memorization",
        }
    }

    /// Kinds whose points `sweep` can spread over workers.
    pub fn is_grid(self) -> bool {
        matches!(self, Kind::EtpGrid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSweepParams {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub sigma: f64,
    /// Fixed shift component orthogonal to μ₂ − μ₁.
    #[serde(default)]
    pub delta_orthogonal: Option<Vec<f64>>,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_step: f64,
    /// Also estimate each rate by Monte Carlo with this many samples per seed.
    #[serde(default)]
    pub monte_carlo_n: Option<usize>,
}

const MAX_GRID: usize = 100_000;

impl RateSweepParams {
    pub fn alphas(&self) -> Vec<f64> {
        let count = ((self.alpha_max - self.alpha_min) / self.alpha_step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.alpha_min + i as f64 * self.alpha_step).collect()
    }

    pub fn spec_at(&self, alpha: f64) -> Result<DomainSpec> {
        let diff: Vec<f64> = self.mu2.iter().zip(&self.mu1).map(|(b, a)| b - a).collect();
        let mut delta: Vec<f64> = diff.iter().map(|v| alpha * v).collect();
        if let Some(o) = &self.delta_orthogonal {
            delta.iter_mut().zip(o).for_each(|(d, v)| *d += v);
        }
        DomainSpec::new(self.mu1.clone(), self.mu2.clone(), self.sigma, delta)
    }

    fn validate(&self) -> Result<()> {
        let d = self.mu1.len();
        if !(self.sigma.is_finite() && self.sigma >= MIN_SIGMA) {
            return Err(Error::config("sigma", format!("must be finite and >= {MIN_SIGMA:e}")));
        }
        DomainSpec::new(self.mu1.clone(), self.mu2.clone(), self.sigma, vec![0.0; d]).map_err(|e| field("mu1", e))?;
        if !(self.alpha_step.is_finite() && self.alpha_step > 0.0) {
            return Err(Error::config("alpha_step", "must be positive"));
        }
        if !(self.alpha_min.is_finite() && self.alpha_max.is_finite() && self.alpha_max >= self.alpha_min) {
            return Err(Error::config("alpha_max", "must be finite and at least alpha_min"));
        }
        if (self.alpha_max - self.alpha_min) / self.alpha_step >= MAX_GRID as f64 {
            return Err(Error::config("alpha_step", format!("grid exceeds {MAX_GRID} points")));
        }
        if let Some(o) = &self.delta_orthogonal {
            if o.len() != d {
                return Err(Error::config("delta_orthogonal", format!("length {} != dimension {d}", o.len())));
            }
            let diff: Vec<f64> = self.mu2.iter().zip(&self.mu1).map(|(b, a)| b - a).collect();
            if dot(o, &diff).abs() > 1e-9 * (norm2(o) * norm2(&diff)).sqrt().max(1.0) {
                return Err(Error::config("delta_orthogonal", "must be orthogonal to mu2 - mu1"));
            }
        }
        if let Some(n) = self.monte_carlo_n {
            if n < 1000 {
                return Err(Error::config("monte_carlo_n", "must be at least 1000"));
            }
        }
        Ok(())
    }
}

fn default_min_in_region() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionCheckParams {
    pub d: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub delta_conf: f64,
    /// Defaults to the origin.
    #[serde(default)]
    pub mu1: Option<Vec<f64>>,
    /// Unconditioned target draws.
    pub n_samples: usize,
    #[serde(default = "default_min_in_region")]
    pub min_in_region: usize,
    /// Also draw this many samples conditioned on R.
    #[serde(default)]
    pub conditional_n: Option<usize>,
}

impl RegionCheckParams {
    pub fn rspec(&self) -> Result<RegionRSpec> {
        let mu1 = self.mu1.clone().unwrap_or_else(|| vec![0.0; self.d]);
        RegionRSpec::new(self.delta_conf, DomainSpec::along_ones(mu1, self.sigma, self.alpha)?)
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("d", "must be positive"));
        }
        if let Some(m) = &self.mu1 {
            if m.len() != self.d {
                return Err(Error::config("mu1", format!("length {} != d = {}", m.len(), self.d)));
            }
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if self.conditional_n == Some(0) {
            return Err(Error::config("conditional_n", "must be positive"));
        }
        self.rspec().map(|_| ()).map_err(|e| field("delta_conf", e))
    }
}

fn default_eta() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtpRunParams {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub r: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Defaults to ⌈50/η⌉.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub form: GradForm,
    #[serde(default)]
    pub halt_at_t: bool,
}

impl EtpRunParams {
    pub fn gd_config(&self) -> GdConfig {
        GdConfig {
            eta: self.eta,
            max_steps: self.max_steps.unwrap_or((50.0 / self.eta).ceil() as usize),
            form: self.form,
            halt_at_t: self.halt_at_t,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        if self.d == 0 {
            return Err(Error::config("d", "must be positive"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config("sigma", "must be positive"));
        }
        if !(self.r < 1.0) {
            return Err(Error::config("r", "must be below 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config("eta", "must be positive"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be positive"));
        }
        Ok(())
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtpGridParams {
    pub n: usize,
    pub d: usize,
    pub sigmas: Vec<f64>,
    pub rs: Vec<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub form: GradForm,
    #[serde(default = "yes")]
    pub halt_at_t: bool,
}

impl EtpGridParams {
    /// Grid points, σ-major.
    pub fn points(&self) -> Vec<EtpRunParams> {
        let mut out = Vec::with_capacity(self.sigmas.len() * self.rs.len());
        for &sigma in &self.sigmas {
            for &r in &self.rs {
                out.push(EtpRunParams {
                    n: self.n,
                    d: self.d,
                    sigma,
                    r,
                    eta: self.eta,
                    max_steps: self.max_steps,
                    form: self.form,
                    halt_at_t: self.halt_at_t,
                });
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::config("sigmas", "must not be empty"));
        }
        if self.rs.is_empty() {
            return Err(Error::config("rs", "must not be empty"));
        }
        for (i, p) in self.points().iter().enumerate() {
            p.validate().map_err(|e| match e {
                Error::Config { field, msg } => Error::config(format!("{field} (grid point {i})"), msg),
                other => other,
            })?;
        }
        Ok(())
    }
}

/// One training recipe on the bench.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    #[serde(default)]
    pub name: Option<String>,
    pub loss: LossSpec,
    #[serde(default)]
    pub elr: Option<ElrConfig>,
    #[serde(default)]
    pub regularizer: Option<LossSpec>,
    #[serde(default)]
    pub corrector: Option<Corrector>,
}

impl Variant {
    pub fn new(name: &str, loss: LossKind) -> Self {
        Variant { name: Some(name.into()), loss: loss.into(), elr: None, regularizer: None, corrector: None }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.loss.kind.name())
    }

    pub fn train_config(&self, setup: &BenchSetup, seed: u64) -> TrainConfig {
        let mut cfg = setup.train_config(LossKind::Ce, seed);
        cfg.loss = self.loss.clone();
        cfg.elr = self.elr;
        cfg.regularizer = self.regularizer.clone();
        cfg.corrector = self.corrector;
        cfg
    }

    /// CE, CE+ELR(β=0.9, λ=3), GCE, SL, GJS, CE+SR(λ=3), CE with the epoch-wise corrector.
    pub fn standard_set() -> Vec<Variant> {
        let mut elr = Variant::new("ce_elr", LossKind::Ce);
        elr.elr = Some(ElrConfig { beta: 0.9, lambda: 3.0 });
        let mut sr = Variant::new("ce_sr", LossKind::Ce);
        sr.regularizer = Some(LossSpec { kind: LossKind::Sr, lambda: 3.0 });
        let mut cor = Variant::new("ce_corrector", LossKind::Ce);
        cor.corrector = Some(Corrector::EpochRelabel { confidence_threshold: 0.75 });
        vec![
            Variant::new("ce", LossKind::Ce),
            elr,
            Variant::new("gce", LossKind::Gce { q: 0.7 }),
            Variant::new("sl", LossKind::Sl { alpha: 0.1, beta: 1.0 }),
            Variant::new("gjs", LossKind::gjs_default()),
            sr,
            cor,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRunParams {
    #[serde(default)]
    pub setup: BenchSetup,
    pub train: Variant,
}

fn standard_variants() -> Vec<Variant> {
    Variant::standard_set()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCompareParams {
    #[serde(default)]
    pub setup: BenchSetup,
    #[serde(default = "standard_variants")]
    pub variants: Vec<Variant>,
}

fn default_threshold() -> f64 {
    0.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorizationParams {
    #[serde(default)]
    pub setup: BenchSetup,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn validate_setup(setup: &BenchSetup) -> Result<()> {
    setup.validate().map_err(|e| field("setup", e))?;
    let cfg = setup.train_config(LossKind::Ce, 0);
    cfg.validate().map_err(|e| field("setup", e))
}

fn validate_variant(v: &Variant, setup: &BenchSetup, at: &str) -> Result<()> {
    if let Some(n) = &v.name {
        check_component(n).map_err(|m| Error::config(format!("{at}.name"), m))?;
    }
    v.train_config(setup, 0).validate().map_err(|e| field(at, e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum Params {
    RateSweep(RateSweepParams),
    RegionCheck(RegionCheckParams),
    EtpRun(EtpRunParams),
    EtpGrid(EtpGridParams),
    BenchRun(BenchRunParams),
    BenchCompare(BenchCompareParams),
    Memorization(MemorizationParams),
}

impl Params {
    pub fn kind(&self) -> Kind {
        match self {
            Params::RateSweep(_) => Kind::RateSweep,
            Params::RegionCheck(_) => Kind::RegionCheck,
            Params::EtpRun(_) => Kind::EtpRun,
            Params::EtpGrid(_) => Kind::EtpGrid,
            Params::BenchRun(_) => Kind::BenchRun,
            Params::BenchCompare(_) => Kind::BenchCompare,
            Params::Memorization(_) => Kind::Memorization,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Params::RateSweep(p) => p.validate(),
            Params::RegionCheck(p) => p.validate(),
            Params::EtpRun(p) => p.validate(),
            Params::EtpGrid(p) => p.validate(),
            Params::BenchRun(p) => {
                validate_setup(&p.setup)?;
                validate_variant(&p.train, &p.setup, "train")
            }
            Params::BenchCompare(p) => {
                validate_setup(&p.setup)?;
                if p.variants.is_empty() {
                    return Err(Error::config("variants", "must not be empty"));
                }
                let mut seen = BTreeSet::new();
                for (i, v) in p.variants.iter().enumerate() {
                    let at = format!("variants[{i}]");
                    validate_variant(v, &p.setup, &at)?;
                    if !seen.insert(v.label()) {
                        return Err(Error::config(at, format!("duplicate variant name `{}`", v.label())));
                    }
                }
                Ok(())
            }
            Params::Memorization(p) => {
                validate_setup(&p.setup)?;
                if !(p.threshold > 0.0 && p.threshold <= 1.0) {
                    return Err(Error::config("threshold", "must lie in (0,1]"));
                }
                Ok(())
            }
        }
    }
}

/// A validated experiment description.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(flatten)]
    pub params: Params,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    kind: Kind,
    #[serde(default)]
    parameters: serde_json::Value,
    seeds: Vec<u64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

/// Prefixes a validation error with the field it came from.
fn field(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, msg } => Error::config(format!("{prefix}.{field}"), msg),
        Error::Range { name, msg } => Error::config(format!("{prefix}.{name}"), msg),
        other => Error::config(prefix, other.to_string()),
    }
}

fn check_component(name: &str) -> std::result::Result<(), String> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(format!("`{name}` must be nonempty, not start with '.', and use only [A-Za-z0-9_.-]"))
    }
}

fn parse_section<T: DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." { prefix.to_string() } else { format!("{prefix}.{path}") };
        Error::config(at, e.into_inner().to_string())
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str, format: Format) -> Result<Self> {
        let value: serde_json::Value = match format {
            Format::Json => serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?,
            Format::Toml => toml::from_str(text).map_err(|e| Error::config("<document>", e.message().to_string()))?,
        };
        let raw: RawConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<document>".into() } else { path }, e.into_inner().to_string())
        })?;
        let parameters = match raw.parameters {
            serde_json::Value::Null => serde_json::Value::Object(Default::default()),
            v => v,
        };
        let params = match raw.kind {
            Kind::RateSweep => Params::RateSweep(parse_section(parameters, "parameters")?),
            Kind::RegionCheck => Params::RegionCheck(parse_section(parameters, "parameters")?),
            Kind::EtpRun => Params::EtpRun(parse_section(parameters, "parameters")?),
            Kind::EtpGrid => Params::EtpGrid(parse_section(parameters, "parameters")?),
            Kind::BenchRun => Params::BenchRun(parse_section(parameters, "parameters")?),
            Kind::BenchCompare => Params::BenchCompare(parse_section(parameters, "parameters")?),
            Kind::Memorization => Params::Memorization(parse_section(parameters, "parameters")?),
        };
        let cfg = ExperimentConfig { name: raw.name, params, seeds: raw.seeds, output_dir: raw.output_dir };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Format from the extension: `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Toml,
        };
        Self::parse(&text, format)
    }

    pub fn validate(&self) -> Result<()> {
        check_component(&self.name).map_err(|m| Error::config("name", m))?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::config("seeds", "must not repeat"));
        }
        self.params.validate().map_err(|e| field("parameters", e))
    }

    pub fn kind(&self) -> Kind {
        self.params.kind()
    }

    /// Compact JSON with sorted keys of everything that affects results
    /// (the output directory is left out), defaults filled in.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        // via Value so object keys come out sorted
        let v = serde_json::to_value(&c).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
