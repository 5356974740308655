//! Validation experiments over a completed pipeline run.
//!
//! Four studies, each writing one report under `reports/`:
//! - correlation: do frozen-suite estimates track reference attack results
//!   across the zoo, averaged over independent selection seeds?
//! - ablation: how much of that correlation survives with random selection,
//!   or with the difficulty regularizer disabled?
//! - speedup: measured wall-clock ratio of the reference attacks against
//!   forward-only suite scoring, on the same systems.
//! - adaptive: a system fine-tuned against a released suite inflates its
//!   score there; a fresh suite from the same pools exposes the gap.
//!
//! Reports are diagnostics, not pipeline artifacts: they may contain wall
//! times and live outside the deterministic byte-for-byte contract.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::artifact;
use crate::config::{Config, ZooRole};
use crate::error::{Error, Result};
use crate::generate::{self, Pool};
use crate::numerics::{pearson, RngStream};
use crate::optimize::{self, FailureMatrix};
use crate::perturb::SchemeKind;
use crate::pipeline::{generation_pairs, load_zoo, AttacksManifest, Layout, LoadedZoo};
use crate::reference::{self, PgdConfig};
use crate::siamese::{self, FineTuneConfig, HingePair, Meter};
use crate::suite::{self, SetSpec, TestSuite};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Independent selection seeds per scheme; estimates are averaged over them.
pub const GA_SEEDS: usize = 3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRun {
    pub ga_seed: u64,
    pub suite_seed: u64,
    pub k: usize,
    pub selected: Vec<usize>,
    /// Estimates and references over the scored systems, in zoo order.
    pub estimates: Vec<f64>,
    pub references: Vec<f64>,
    pub pearson: f64,
    /// Out-of-role control member, reported separately.
    pub extra_estimate: f64,
    pub extra_reference: f64,
    pub mean_consistency: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeCorrelation {
    pub scheme: String,
    pub kind: SchemeKind,
    pub systems: Vec<String>,
    pub extra_system: String,
    pub runs: Vec<SeedRun>,
    pub mean_pearson: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub format_version: u32,
    pub seeds_per_scheme: usize,
    pub schemes: Vec<SchemeCorrelation>,
}

/// Names and zoo indices of the scored (non-extra) members plus the extra.
fn split_roles(zoo: &LoadedZoo) -> (Vec<usize>, usize) {
    let scored: Vec<usize> = zoo
        .members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.role != ZooRole::Extra)
        .map(|(i, _)| i)
        .collect();
    let extra = zoo
        .members
        .iter()
        .position(|m| m.role == ZooRole::Extra)
        .expect("zoo always holds exactly one extra member");
    (scored, extra)
}

/// Scores one selected subset as a frozen single-set suite against every zoo
/// member. Returns (per-member robustness, per-member consistency).
fn score_selection(
    pool: &Pool,
    selected: &[usize],
    pairs: &crate::dataset::PairSet,
    suite_seed: u64,
    zoo: &LoadedZoo,
    meter: &Meter,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let spec = SetSpec { pool, selected };
    let assembled = suite::assemble(&[spec], pairs, suite_seed)?;
    let set = &assembled.sets[0];
    let mut robustness = Vec::with_capacity(zoo.members.len());
    let mut consistency = Vec::with_capacity(zoo.members.len());
    for m in &zoo.members {
        let eval = suite::evaluate_set(&m.member.system, set, meter)?;
        robustness.push(eval.robustness);
        consistency.push(eval.prediction_consistency);
    }
    Ok((robustness, consistency))
}

fn pearson_or_zero(a: &[f64], b: &[f64]) -> f64 {
    pearson(a, b).unwrap_or(0.0)
}

/// Per-scheme correlation of suite estimates with reference robust accuracy
/// across the scored zoo, averaged over `GA_SEEDS` independent selections.
/// The seed-0 selection reproduces the pipeline's own.
pub fn correlation(layout: &Layout, cfg: &Config) -> Result<CorrelationReport> {
    let (_, _, gen_pairs) = generation_pairs(layout)?;
    let zoo = load_zoo(layout)?;
    let attacks: AttacksManifest = artifact::read_json(&layout.attacks_file())?;
    let (scored, extra) = split_roles(&zoo);
    let scored_names: Vec<String> = scored.iter().map(|&i| zoo.members[i].name.clone()).collect();
    let extra_name = zoo.members[extra].name.clone();
    let tuning = zoo.systems_with_role(ZooRole::Tuning);
    let tuning_names = zoo.names_with_role(ZooRole::Tuning);
    let meter = Meter::new();

    let mut schemes = Vec::with_capacity(cfg.schemes.len());
    for (ki, section) in cfg.schemes.iter().enumerate() {
        let pool = generate::load_pool(&layout.pool_dir(&section.name))?;
        let matrix = FailureMatrix::build(&pool, &tuning, &gen_pairs, &meter)?;
        let r_ref_tuning = attacks.reference_for(&section.name, &tuning_names)?;
        let references = attacks.reference_for(&section.name, &scored_names)?;
        let extra_reference = attacks.reference_for(&section.name, &[extra_name.clone()])?[0];

        let mut runs = Vec::with_capacity(GA_SEEDS);
        for s in 0..GA_SEEDS {
            let ga_seed = cfg
                .selection
                .seed
                .wrapping_add(ki as u64)
                .wrapping_add(10_000 * s as u64);
            let suite_seed = cfg.suite.seed.wrapping_add(1_000 * s as u64);
            let ga_cfg = cfg.selection.ga_config(ga_seed);
            let selection = optimize::ga_select(&matrix, &r_ref_tuning, &ga_cfg)?;
            let (all_rob, all_cons) =
                score_selection(&pool, &selection.selected, &gen_pairs, suite_seed, &zoo, &meter)?;
            let estimates: Vec<f64> = scored.iter().map(|&i| all_rob[i]).collect();
            let mean_consistency =
                scored.iter().map(|&i| all_cons[i]).sum::<f64>() / scored.len() as f64;
            runs.push(SeedRun {
                ga_seed,
                suite_seed,
                k: selection.k,
                selected: selection.selected,
                estimates: estimates.clone(),
                references: references.clone(),
                pearson: pearson_or_zero(&estimates, &references),
                extra_estimate: all_rob[extra],
                extra_reference,
                mean_consistency,
            });
        }
        let mean_pearson = runs.iter().map(|r| r.pearson).sum::<f64>() / runs.len() as f64;
        schemes.push(SchemeCorrelation {
            scheme: section.name.clone(),
            kind: section.kind,
            systems: scored_names.clone(),
            extra_system: extra_name.clone(),
            runs,
            mean_pearson,
        });
    }
    Ok(CorrelationReport {
        format_version: REPORT_FORMAT_VERSION,
        seeds_per_scheme: GA_SEEDS,
        schemes,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationArm {
    pub per_seed: Vec<f64>,
    pub mean_pearson: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub scheme: String,
    pub full: AblationArm,
    pub random: AblationArm,
    pub no_regularizer: AblationArm,
    /// full - random: value of optimizing the selection at all.
    pub delta_random: f64,
    /// full - no_regularizer: value of the difficulty regularizer.
    pub delta_regularizer: f64,
}

/// Ablates the selection on the first max-norm scheme: the full objective
/// against (a) uniformly random subsets of the same size and (b) the
/// regularizer-free objective, all scored like `correlation`.
pub fn ablation(layout: &Layout, cfg: &Config, corr: &CorrelationReport) -> Result<AblationReport> {
    let section = cfg
        .schemes
        .iter()
        .find(|s| s.kind == SchemeKind::LInf)
        .ok_or_else(|| Error::Config("ablation needs a max-norm scheme".into()))?;
    let full_scheme = corr
        .schemes
        .iter()
        .find(|s| s.scheme == section.name)
        .ok_or_else(|| Error::Config(format!("no correlation runs for scheme {}", section.name)))?;

    let (_, _, gen_pairs) = generation_pairs(layout)?;
    let zoo = load_zoo(layout)?;
    let attacks: AttacksManifest = artifact::read_json(&layout.attacks_file())?;
    let (scored, _) = split_roles(&zoo);
    let scored_names: Vec<String> = scored.iter().map(|&i| zoo.members[i].name.clone()).collect();
    let references = attacks.reference_for(&section.name, &scored_names)?;
    let tuning = zoo.systems_with_role(ZooRole::Tuning);
    let tuning_names = zoo.names_with_role(ZooRole::Tuning);
    let meter = Meter::new();

    let pool = generate::load_pool(&layout.pool_dir(&section.name))?;
    let matrix = FailureMatrix::build(&pool, &tuning, &gen_pairs, &meter)?;
    let r_ref_tuning = attacks.reference_for(&section.name, &tuning_names)?;

    let score = |selected: &[usize], suite_seed: u64| -> Result<f64> {
        let (all_rob, _) = score_selection(&pool, selected, &gen_pairs, suite_seed, &zoo, &meter)?;
        let estimates: Vec<f64> = scored.iter().map(|&i| all_rob[i]).collect();
        Ok(pearson_or_zero(&estimates, &references))
    };

    let mut random_per_seed = Vec::with_capacity(full_scheme.runs.len());
    let mut noreg_per_seed = Vec::with_capacity(full_scheme.runs.len());
    for (s, run) in full_scheme.runs.iter().enumerate() {
        // Random arm: same size as the full pick, same assembly seed.
        let mut rng = RngStream::substream(cfg.selection.seed ^ 0xab1a_17, s as u64);
        let mut selected = rng.distinct_below(run.k, pool.candidates.len());
        selected.sort_unstable();
        random_per_seed.push(score(&selected, run.suite_seed)?);

        let mut ga_cfg = cfg.selection.ga_config(run.ga_seed);
        ga_cfg.lambda1 = 0.0;
        let noreg = optimize::ga_select(&matrix, &r_ref_tuning, &ga_cfg)?;
        noreg_per_seed.push(score(&noreg.selected, run.suite_seed)?);
    }

    let arm = |per_seed: Vec<f64>| -> AblationArm {
        let mean_pearson = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        AblationArm {
            per_seed,
            mean_pearson,
        }
    };
    let full = arm(full_scheme.runs.iter().map(|r| r.pearson).collect());
    let random = arm(random_per_seed);
    let no_regularizer = arm(noreg_per_seed);
    Ok(AblationReport {
        format_version: REPORT_FORMAT_VERSION,
        scheme: section.name.clone(),
        delta_random: full.mean_pearson - random.mean_pearson,
        delta_regularizer: full.mean_pearson - no_regularizer.mean_pearson,
        full,
        random,
        no_regularizer,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub format_version: u32,
    pub systems: usize,
    pub schemes: usize,
    pub suite_members: usize,
    pub attack_seconds: f64,
    pub suite_seconds: f64,
    pub speedup: f64,
    pub attack_forward: u64,
    pub attack_backward: u64,
    pub suite_forward: u64,
    pub suite_backward: u64,
}

/// Times the full reference attack grid against forward-only suite scoring
/// on the same zoo, live on this machine. The suite pass must stay strictly
/// gradient-free; its meter proves it.
pub fn speedup(layout: &Layout, cfg: &Config) -> Result<SpeedupReport> {
    let (ds, _, gen_pairs) = generation_pairs(layout)?;
    let zoo = load_zoo(layout)?;
    let frozen = suite::load_suite(&layout.suite_dir())?;

    let attack_meter = Meter::new();
    let t0 = Instant::now();
    for (si, m) in zoo.members.iter().enumerate() {
        for (ki, section) in cfg.schemes.iter().enumerate() {
            let scheme = section.build(ds.config.side)?;
            let pgd = PgdConfig {
                steps: cfg.attack.steps,
                restarts: cfg.attack.restarts,
                step_size: section.attack_step,
                rule: cfg.attack.rule,
                seed: cfg.attack.seed.wrapping_add((si * cfg.schemes.len() + ki) as u64),
            };
            reference::robust_accuracy(&m.member.system, &scheme, &gen_pairs, &pgd, &attack_meter)?;
        }
    }
    let attack_seconds = t0.elapsed().as_secs_f64();

    let suite_meter = Meter::new();
    let t1 = Instant::now();
    for m in &zoo.members {
        suite::evaluate_suite(&m.member.system, &frozen, &suite_meter)?;
    }
    let suite_seconds = t1.elapsed().as_secs_f64();

    Ok(SpeedupReport {
        format_version: REPORT_FORMAT_VERSION,
        systems: zoo.members.len(),
        schemes: cfg.schemes.len(),
        suite_members: frozen.total_members(),
        attack_seconds,
        suite_seconds,
        speedup: attack_seconds / suite_seconds,
        attack_forward: attack_meter.forward_count(),
        attack_backward: attack_meter.backward_count(),
        suite_forward: suite_meter.forward_count(),
        suite_backward: suite_meter.backward_count(),
    })
}

pub fn default_fine_tune() -> FineTuneConfig {
    FineTuneConfig {
        epochs: 8,
        lr: 0.03,
        gap: 0.05,
        seed: 97,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveReport {
    pub format_version: u32,
    pub system: String,
    pub fine_tune: FineTuneConfig,
    pub released_before: f64,
    pub released_after: f64,
    pub fresh_before: f64,
    pub fresh_after: f64,
    /// released_after - released_before: how far tuning against the released
    /// suite inflated its score.
    pub inflation: f64,
    /// released_after - fresh_after: the gap a fresh suite exposes.
    pub fresh_gap: f64,
    pub holdout_accuracy_before: f64,
    pub holdout_accuracy_after: f64,
}

/// Games the released suite: fine-tunes one unseen system on the suite's own
/// elements (originals and perturbed alike, threshold fixed), then rescores
/// on the released suite and on a fresh suite drawn from the same pools with
/// different selection and assembly seeds.
pub fn adaptive(layout: &Layout, cfg: &Config, ft: &FineTuneConfig) -> Result<AdaptiveReport> {
    let (ds, splits, gen_pairs) = generation_pairs(layout)?;
    let zoo = load_zoo(layout)?;
    let attacks: AttacksManifest = artifact::read_json(&layout.attacks_file())?;
    let target = zoo
        .members
        .iter()
        .find(|m| m.role == ZooRole::Testing)
        .ok_or_else(|| Error::Config("adaptive study needs a testing system".into()))?;
    let released = suite::load_suite(&layout.suite_dir())?;
    let fresh = fresh_suite(layout, cfg, &zoo, &attacks, &gen_pairs)?;
    let holdout = ds.set.subset(&splits.holdout);
    let meter = Meter::new();

    let mut sys = target.member.system.clone();
    let released_before = suite::evaluate_suite(&sys, &released, &meter)?.mean_robustness;
    let fresh_before = suite::evaluate_suite(&sys, &fresh, &meter)?.mean_robustness;
    let holdout_accuracy_before = siamese::clean_accuracy(&sys, &holdout, &meter)?;

    let mut pairs = Vec::new();
    for set in &released.sets {
        for i in 0..set.len() {
            pairs.push(HingePair {
                alpha: &set.perturbed[i],
                beta: &set.betas[i],
                label: set.labels[i],
            });
            pairs.push(HingePair {
                alpha: &set.originals[i],
                beta: &set.betas[i],
                label: set.labels[i],
            });
        }
    }
    siamese::fine_tune_margins(&mut sys, &pairs, ft, &meter)?;

    let released_after = suite::evaluate_suite(&sys, &released, &meter)?.mean_robustness;
    let fresh_after = suite::evaluate_suite(&sys, &fresh, &meter)?.mean_robustness;
    let holdout_accuracy_after = siamese::clean_accuracy(&sys, &holdout, &meter)?;

    Ok(AdaptiveReport {
        format_version: REPORT_FORMAT_VERSION,
        system: target.name.clone(),
        fine_tune: ft.clone(),
        released_before,
        released_after,
        fresh_before,
        fresh_after,
        inflation: released_after - released_before,
        fresh_gap: released_after - fresh_after,
        holdout_accuracy_before,
        holdout_accuracy_after,
    })
}

/// A second suite from the same pools and references, re-selected and
/// re-assembled under offset seeds: a fresh draw of the release procedure.
fn fresh_suite(
    layout: &Layout,
    cfg: &Config,
    zoo: &LoadedZoo,
    attacks: &AttacksManifest,
    gen_pairs: &crate::dataset::PairSet,
) -> Result<TestSuite> {
    let tuning = zoo.systems_with_role(ZooRole::Tuning);
    let tuning_names = zoo.names_with_role(ZooRole::Tuning);
    let meter = Meter::new();
    let mut pools = Vec::with_capacity(cfg.schemes.len());
    let mut picks = Vec::with_capacity(cfg.schemes.len());
    for (ki, section) in cfg.schemes.iter().enumerate() {
        let pool = generate::load_pool(&layout.pool_dir(&section.name))?;
        let matrix = FailureMatrix::build(&pool, &tuning, gen_pairs, &meter)?;
        let r_ref = attacks.reference_for(&section.name, &tuning_names)?;
        let ga_seed = cfg
            .selection
            .seed
            .wrapping_add(ki as u64)
            .wrapping_add(777_000);
        let selection = optimize::ga_select(&matrix, &r_ref, &cfg.selection.ga_config(ga_seed))?;
        pools.push(pool);
        picks.push(selection.selected);
    }
    let specs: Vec<SetSpec> = pools
        .iter()
        .zip(&picks)
        .map(|(pool, selected)| SetSpec {
            pool,
            selected,
        })
        .collect();
    suite::assemble(&specs, gen_pairs, cfg.suite.seed.wrapping_add(777))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentsReport {
    pub correlations: CorrelationReport,
    pub ablation: AblationReport,
    pub speedup: SpeedupReport,
    pub adaptive: AdaptiveReport,
}

/// Runs every study against the artifacts under `layout` and writes the four
/// reports. The pipeline must have completed first.
pub fn run_all(layout: &Layout, cfg: &Config) -> Result<ExperimentsReport> {
    let reports = layout.reports_dir();
    std::fs::create_dir_all(&reports).map_err(|e| crate::error::io_err(&reports, e))?;

    let correlations = correlation(layout, cfg)?;
    artifact::write_json(&reports.join("correlations.json"), &correlations)?;
    let ablation_report = ablation(layout, cfg, &correlations)?;
    artifact::write_json(&reports.join("ablation.json"), &ablation_report)?;
    let speedup_report = speedup(layout, cfg)?;
    artifact::write_json(&reports.join("speedup.json"), &speedup_report)?;
    let adaptive_report = adaptive(layout, cfg, &default_fine_tune())?;
    artifact::write_json(&reports.join("adaptive.json"), &adaptive_report)?;

    Ok(ExperimentsReport {
        correlations,
        ablation: ablation_report,
        speedup: speedup_report,
        adaptive: adaptive_report,
    })
}
