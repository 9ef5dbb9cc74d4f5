//! One executor per experiment kind. Executors compute everything in
//! memory and return the files to write; nothing touches disk here.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::*;
use super::output::{aggregate, b, f, opt_f, opt_u, u, Artifacts, RunSummary, SeedMetrics, Table, SCHEMA_VERSION};
use crate::bench::{self, CurveRecord, TrainResult};
use crate::domain::{mislabel_rate_closed_form, mislabel_rate_monte_carlo};
use crate::error::{Error, Result};
use crate::etp::{self, TrainTrace};
use crate::noise::{self, region_r_monte_carlo, region_r_nonempty_condition, sample_region_r};
use crate::rng;

/// Per-seed metrics and named pass/fail checks of one experiment.
#[derive(Default)]
struct Outcome {
    per_seed: Vec<SeedMetrics>,
    checks: BTreeMap<String, bool>,
    files: Artifacts,
}

/// Runs `cfg` with up to `jobs` workers for grid kinds.
pub fn execute(cfg: &ExperimentConfig, jobs: usize) -> Result<(RunSummary, Artifacts)> {
    cfg.validate()?;
    if jobs == 0 {
        return Err(Error::config("jobs", "must be positive"));
    }
    let out = match &cfg.params {
        Params::RateSweep(p) => rate_sweep(p, &cfg.seeds)?,
        Params::RegionCheck(p) => region_check(p, &cfg.seeds)?,
        Params::EtpRun(p) => etp_run(p, &cfg.seeds)?,
        Params::EtpGrid(p) => etp_grid(p, &cfg.seeds, jobs)?,
        Params::BenchRun(p) => bench_run(p, &cfg.seeds)?,
        Params::BenchCompare(p) => bench_compare(p, &cfg.seeds)?,
        Params::Memorization(p) => memorization(p, &cfg.seeds)?,
    };
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        kind: cfg.kind().as_str().into(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        aggregate: aggregate(&out.per_seed),
        passed: out.checks.values().all(|&v| v),
        per_seed: out.per_seed,
        checks: out.checks,
    };
    let mut files = out.files;
    files.add("config.json", pretty(&cfg.canonical_json())?);
    files.add_json("summary.json", &summary)?;
    Ok((summary, files))
}

fn pretty(json: &str) -> Result<Vec<u8>> {
    let v: serde_json::Value = serde_json::from_str(json)?;
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// True for at least `num/den` of the values.
fn at_least(flags: &[bool], num: usize, den: usize) -> bool {
    flags.iter().filter(|&&x| x).count() * den >= num * flags.len()
}

fn majority(flags: &[bool]) -> bool {
    2 * flags.iter().filter(|&&x| x).count() > flags.len()
}

fn rate_sweep(p: &RateSweepParams, seeds: &[u64]) -> Result<Outcome> {
    let alphas = p.alphas();
    let rates = alphas
        .iter()
        .map(|&a| mislabel_rate_closed_form(&p.spec_at(a)?))
        .collect::<Result<Vec<f64>>>()?;
    let mut out = Outcome::default();
    let mut t = Table::new(&["alpha", "rate"]);
    for (a, r) in alphas.iter().zip(&rates) {
        t.push(vec![f(*a), f(*r)]);
    }
    out.files.add_csv("rates.csv", &t)?;

    // rate must not increase as α moves toward 0 from either side
    let mut u_shape = true;
    for i in 1..alphas.len() {
        let (a0, a1) = (alphas[i - 1], alphas[i]);
        if a1 <= 0.0 && rates[i] > rates[i - 1] {
            u_shape = false;
        }
        if a0 >= 0.0 && rates[i] < rates[i - 1] {
            u_shape = false;
        }
    }
    out.checks.insert("u_shape".into(), u_shape);

    let mut mc = Table::new(&["seed", "alpha", "closed_form", "estimate", "std_error", "within_3se"]);
    let mut all_within = true;
    for &seed in seeds {
        let mut m = SeedMetrics::new(seed);
        m.set("min_rate", rates.iter().cloned().fold(f64::INFINITY, f64::min));
        m.set("max_rate", rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        if let Some(n) = p.monte_carlo_n {
            let base = rng::derive(seed, rng::tag::BATTERY);
            let mut worst: f64 = 0.0;
            for (i, (&a, &r)) in alphas.iter().zip(&rates).enumerate() {
                let est = mislabel_rate_monte_carlo(&p.spec_at(a)?, n, rng::derive(base, i as u64))?;
                let ok = est.agrees_with(r, 3.0);
                all_within &= ok;
                worst = worst.max((est.estimate - r).abs() / est.std_error);
                mc.push(vec![seed.to_string(), f(a), f(r), f(est.estimate), f(est.std_error), b(ok)]);
            }
            m.set("max_abs_z", worst);
        }
        out.per_seed.push(m);
    }
    if p.monte_carlo_n.is_some() {
        out.files.add_csv("monte_carlo.csv", &mc)?;
        out.checks.insert("monte_carlo_within_3se".into(), all_within);
    }
    Ok(out)
}

fn region_check(p: &RegionCheckParams, seeds: &[u64]) -> Result<Outcome> {
    let rspec = p.rspec()?;
    let nonempty = region_r_nonempty_condition(&rspec)?;
    let floor = 1.0 - rspec.delta_conf;
    let mut out = Outcome::default();
    out.checks.insert("nonempty_condition".into(), nonempty);
    let mut t = Table::new(&[
        "seed",
        "nonempty_condition",
        "r1_radius",
        "n",
        "in_region",
        "mislabeled_in_region",
        "estimate",
        "std_error",
        "literal_pass",
        "conditional_n",
        "conditional_estimate",
        "conditional_std_error",
        "conditional_clamped",
        "conditional_pass",
    ]);
    let (mut lit_all, mut cond_all) = (true, true);
    for &seed in seeds {
        let count = region_r_monte_carlo(&rspec, p.n_samples, seed)?;
        let est = count.conditional();
        let lit_ok = count.in_r >= p.min_in_region && est.is_some_and(|e| e.estimate >= floor - 3.0 * e.std_error);
        lit_all &= lit_ok;
        let mut m = SeedMetrics::new(seed);
        m.set("in_region", count.in_r as f64);
        if let Some(e) = est {
            m.set("estimate", e.estimate);
        }
        let cond = p.conditional_n.map(|n| sample_region_r(&rspec, n, seed)).transpose()?;
        let cond_est = cond.as_ref().map(|c| c.mislabel_estimate());
        let cond_ok = cond_est.map(|e| e.estimate >= floor - 3.0 * e.std_error);
        if let Some(ok) = cond_ok {
            cond_all &= ok;
        }
        if let Some(e) = cond_est {
            m.set("conditional_estimate", e.estimate);
        }
        t.push(vec![
            seed.to_string(),
            b(nonempty),
            f(rspec.r1_radius()),
            u(count.n),
            u(count.in_r),
            u(count.mislabeled_in_r),
            opt_f(est.map(|e| e.estimate)),
            opt_f(est.map(|e| e.std_error)),
            b(lit_ok),
            opt_u(p.conditional_n),
            opt_f(cond_est.map(|e| e.estimate)),
            opt_f(cond_est.map(|e| e.std_error)),
            opt_u(cond.as_ref().map(|c| c.clamped)),
            cond_ok.map(b).unwrap_or_default(),
        ]);
        out.per_seed.push(m);
    }
    out.checks.insert("literal_bound".into(), lit_all);
    if p.conditional_n.is_some() {
        out.checks.insert("conditional_bound".into(), cond_all);
    }
    out.files.add_csv("region.csv", &t)?;
    Ok(out)
}

fn trace_table(trace: &TrainTrace) -> Table {
    let mut t = Table::new(&["step", "alignment", "norm", "kappa_B", "loss", "acc_clean", "acc_noisy_fit"]);
    for r in &trace.records {
        t.push(vec![u(r.step), f(r.alignment), f(r.norm), f(r.kappa_b), f(r.loss), f(r.acc_clean), f(r.acc_noisy_fit)]);
    }
    t
}

/// Result of one gradient-descent run on margin-flipped data.
pub struct EtpPoint {
    pub trace: TrainTrace,
    pub bound: f64,
    pub bound_satisfied: bool,
    pub alignment: Option<etp::AlignmentCheck>,
    pub noise_rate: f64,
}

pub fn etp_point(p: &EtpRunParams, seed: u64) -> Result<EtpPoint> {
    let (data, mu) = etp::gen_margin_flip_data(p.n, p.d, p.sigma, p.r, seed)?;
    let trace = etp::gd_train(&data, &mu, &p.gd_config())?;
    let bound = etp::etp_bound(p.sigma, p.r)?;
    let bound_satisfied = trace.kappa_at_t().is_some_and(|k| k >= bound);
    let alignment = trace.theta_at_t.as_ref().map(|_| etp::alignment_bound_check(&trace, &mu, p.sigma, p.r)).transpose()?;
    Ok(EtpPoint { trace, bound, bound_satisfied, alignment, noise_rate: data.noise_rate() })
}

fn etp_metrics(seed: u64, pt: &EtpPoint) -> SeedMetrics {
    let mut m = SeedMetrics::new(seed);
    let tr = &pt.trace;
    m.set("bound", pt.bound);
    m.set("noise_rate", pt.noise_rate);
    if let Some(t) = tr.stopping_t {
        m.set("stopping_t", t as f64);
    }
    if let Some(k) = tr.kappa_at_t() {
        m.set("kappa_at_t", k);
    }
    if let Some(a) = pt.alignment {
        m.set("alignment_cosine", a.cosine);
        m.set("alignment_bound", a.bound);
    }
    let last = tr.records.last().expect("initial record");
    m.set("final_kappa", last.kappa_b);
    m.set("final_acc_noisy_fit", last.acc_noisy_fit);
    m.set("max_kappa", tr.records.iter().map(|r| r.kappa_b).fold(f64::NEG_INFINITY, f64::max));
    m
}

fn etp_checks(points: &[&EtpPoint], out: &mut Outcome) {
    out.checks.insert("bound_satisfied".into(), points.iter().all(|p| p.bound_satisfied));
    out.checks.insert("alignment_bound".into(), points.iter().all(|p| p.alignment.is_some_and(|a| a.holds)));
    out.checks.insert("no_divergence".into(), points.iter().all(|p| !p.trace.diverged));
}

fn etp_run(p: &EtpRunParams, seeds: &[u64]) -> Result<Outcome> {
    let mut out = Outcome::default();
    let points = seeds.iter().map(|&s| etp_point(p, s)).collect::<Result<Vec<_>>>()?;
    for (&seed, pt) in seeds.iter().zip(&points) {
        out.files.add_csv(format!("{seed}.csv"), &trace_table(&pt.trace))?;
        out.per_seed.push(etp_metrics(seed, pt));
    }
    etp_checks(&points.iter().collect::<Vec<_>>(), &mut out);
    Ok(out)
}

fn point_label(i: usize) -> String {
    format!("point_{i:03}")
}

fn etp_grid(p: &EtpGridParams, seeds: &[u64], jobs: usize) -> Result<Outcome> {
    let grid = p.points();
    let tasks: Vec<(usize, u64)> = (0..grid.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Spec(format!("thread pool: {e}")))?;
    // collect() keeps task order regardless of completion order
    let results: Vec<EtpPoint> =
        pool.install(|| tasks.par_iter().map(|&(i, s)| etp_point(&grid[i], s)).collect::<Result<Vec<_>>>())?;

    let mut out = Outcome::default();
    let mut agg = Table::new(&[
        "point",
        "sigma",
        "r",
        "seed",
        "stopping_t",
        "kappa_at_t",
        "bound",
        "bound_satisfied",
        "alignment_cosine",
        "alignment_bound",
        "alignment_ok",
    ]);
    for (&(i, seed), pt) in tasks.iter().zip(&results) {
        let label = point_label(i);
        out.files.add_csv(format!("{label}/{seed}.csv"), &trace_table(&pt.trace))?;
        let mut m = etp_metrics(seed, pt);
        m.point = Some(label.clone());
        out.per_seed.push(m);
        agg.push(vec![
            label,
            f(grid[i].sigma),
            f(grid[i].r),
            seed.to_string(),
            opt_u(pt.trace.stopping_t),
            opt_f(pt.trace.kappa_at_t()),
            f(pt.bound),
            b(pt.bound_satisfied),
            opt_f(pt.alignment.map(|a| a.cosine)),
            opt_f(pt.alignment.map(|a| a.bound)),
            b(pt.alignment.is_some_and(|a| a.holds)),
        ]);
    }
    out.files.add_csv("aggregate.csv", &agg)?;
    etp_checks(&results.iter().collect::<Vec<_>>(), &mut out);
    Ok(out)
}

pub fn curve_table(curve: &[CurveRecord]) -> Table {
    let mut t = Table::new(&[
        "step",
        "alignment",
        "norm",
        "kappa_B",
        "loss",
        "acc_clean",
        "acc_noisy_fit",
        "acc_vs_noisy_labels",
        "labeling_accuracy",
    ]);
    for r in curve {
        t.push(vec![
            u(r.step),
            f(r.alignment),
            f(r.norm),
            f(r.kappa_on_mislabeled),
            f(r.mean_loss),
            f(r.acc_vs_ground_truth),
            f(r.acc_noisy_fit),
            f(r.acc_vs_noisy_labels),
            f(r.labeling_accuracy),
        ]);
    }
    t
}

/// Records at or before this step count as early.
pub const EARLY_STEPS: usize = 90;

fn curve_metrics(m: &mut SeedMetrics, prefix: &str, res: &TrainResult) {
    let last = res.last();
    m.set(format!("{prefix}peak_90"), res.peak_until(EARLY_STEPS));
    m.set(format!("{prefix}final_acc"), last.acc_vs_ground_truth);
    m.set(format!("{prefix}final_acc_vs_noisy_labels"), last.acc_vs_noisy_labels);
    m.set(format!("{prefix}diverged"), f64::from(u8::from(res.diverged)));
}

fn bench_run(p: &BenchRunParams, seeds: &[u64]) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut diverged = false;
    for &seed in seeds {
        let prep = bench::prepare(&p.setup, seed)?;
        let res = bench::train_on_noisy(
            &prep.source.model,
            &prep.target,
            Some(&prep.domains.means),
            &p.train.train_config(&p.setup, seed),
        )?;
        diverged |= res.diverged;
        out.files.add_csv(format!("{seed}.csv"), &curve_table(&res.curve))?;
        let mut m = SeedMetrics::new(seed);
        m.set("labeling_accuracy", prep.target.labeling_accuracy());
        m.set("source_accuracy", prep.source.train_accuracy);
        m.set("elr_clamps", res.elr_clamps as f64);
        curve_metrics(&mut m, "", &res);
        out.per_seed.push(m);
    }
    out.checks.insert("no_divergence".into(), !diverged);
    Ok(out)
}

/// Per-seed comparison flags on a bench_compare run, keyed like the checks.
pub fn compare_flags(m: &SeedMetrics) -> BTreeMap<&'static str, Option<bool>> {
    let g = |k: &str| m.get(k);
    let lab = g("labeling_accuracy");
    let ce_peak = g("ce.peak_90");
    let ce_final = g("ce.final_acc");
    let ce_fit = g("ce.final_acc_vs_noisy_labels");
    let elr = g("ce_elr.final_acc");
    let mut flags = BTreeMap::new();
    flags.insert(
        "fig2_shape",
        (|| Some(ce_peak? >= lab? + 0.03 && (ce_final? - lab?).abs() <= 0.03 && ce_fit? >= 0.95))(),
    );
    flags.insert("elr_protection", (|| Some(elr? >= ce_peak? - 0.05 && elr? >= ce_final? + 0.1))());
    let robust: Vec<f64> = ["gce.final_acc", "sl.final_acc", "gjs.final_acc"].iter().filter_map(|k| g(k)).collect();
    flags.insert(
        "ordering",
        (|| {
            let (e, c) = (elr?, ce_final?);
            (!robust.is_empty()).then(|| robust.iter().all(|&r| e >= r && r >= c))
        })(),
    );
    flags.insert("corrector_gap", (|| Some(g("ce_corrector.final_acc")? <= elr? - 0.05))());
    flags.insert("sr_matches_ce", (|| Some((g("ce_sr.final_acc")? - ce_final?).abs() <= 0.03))());
    flags
}

fn bench_compare(p: &BenchCompareParams, seeds: &[u64]) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut finals =
        Table::new(&["seed", "variant", "labeling_accuracy", "peak_90", "final_acc", "final_acc_vs_noisy_labels", "diverged"]);
    let mut diverged = false;
    let mut per_flag: BTreeMap<&'static str, Vec<bool>> = BTreeMap::new();
    for &seed in seeds {
        let prep = bench::prepare(&p.setup, seed)?;
        let lab = prep.target.labeling_accuracy();
        let mut m = SeedMetrics::new(seed);
        m.set("labeling_accuracy", lab);
        m.set("source_accuracy", prep.source.train_accuracy);
        for v in &p.variants {
            let name = v.label();
            let res = bench::train_on_noisy(
                &prep.source.model,
                &prep.target,
                Some(&prep.domains.means),
                &v.train_config(&p.setup, seed),
            )?;
            diverged |= res.diverged;
            out.files.add_csv(format!("{name}/{seed}.csv"), &curve_table(&res.curve))?;
            curve_metrics(&mut m, &format!("{name}."), &res);
            let last = res.last();
            finals.push(vec![
                seed.to_string(),
                name,
                f(lab),
                f(res.peak_until(EARLY_STEPS)),
                f(last.acc_vs_ground_truth),
                f(last.acc_vs_noisy_labels),
                b(res.diverged),
            ]);
        }
        for (k, v) in compare_flags(&m) {
            if let Some(v) = v {
                per_flag.entry(k).or_default().push(v);
                m.set(format!("check.{k}"), f64::from(u8::from(v)));
            }
        }
        out.per_seed.push(m);
    }
    out.files.add_csv("finals.csv", &finals)?;
    out.checks.insert("no_divergence".into(), !diverged);
    for (k, flags) in per_flag {
        // shape and protection must hold on every seed; comparisons on a majority
        let ok = match k {
            "fig2_shape" | "elr_protection" => flags.iter().all(|&x| x),
            _ => majority(&flags),
        };
        out.checks.insert(k.into(), ok);
    }
    Ok(out)
}

fn memorization(p: &MemorizationParams, seeds: &[u64]) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut t = Table::new(&[
        "seed",
        "labeling_accuracy",
        "noise_rate_unbounded",
        "noise_rate_bounded",
        "steps_unbounded",
        "steps_bounded",
        "unbounded_faster",
    ]);
    let mut faster = Vec::new();
    for &seed in seeds {
        let prep = bench::prepare(&p.setup, seed)?;
        let bounded = noise::match_noise_rate(&prep.target, seed)?;
        let cfg = p.setup.train_config(crate::losses::LossKind::Ce, seed);
        let ms = bench::memorization_speed(&prep.source.model, &prep.target, &bounded, &cfg, p.threshold)?;
        let fast = ms.steps_unbounded < ms.steps_bounded;
        faster.push(fast);
        let mut m = SeedMetrics::new(seed);
        m.set("labeling_accuracy", prep.target.labeling_accuracy());
        m.set("noise_rate_bounded", bounded.noise_rate());
        m.set("steps_unbounded", ms.steps_unbounded as f64);
        m.set("steps_bounded", ms.steps_bounded as f64);
        t.push(vec![
            seed.to_string(),
            f(prep.target.labeling_accuracy()),
            f(prep.target.noise_rate()),
            f(bounded.noise_rate()),
            u(ms.steps_unbounded),
            u(ms.steps_bounded),
            b(fast),
        ]);
        out.per_seed.push(m);
    }
    out.files.add_csv("memorization.csv", &t)?;
    out.checks.insert("unbounded_faster".into(), at_least(&faster, 4, 5));
    Ok(out)
}
