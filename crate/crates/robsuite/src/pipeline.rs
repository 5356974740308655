//! Stage orchestration: dataset -> zoo -> pools -> references -> selection
//! -> suite, with content-addressed skipping.
//!
//! Every stage reloads its inputs from disk artifacts rather than passing
//! values in memory, so a run can resume after any interruption and partial
//! outputs are always inspectable. A stage's digest covers its own config
//! slice plus the digests of its upstream stages; `stages.json` records the
//! digest of every completed stage, and a stage reruns iff its digest
//! changed, an output file is missing, or `force` is set.
//!
//! Pipeline artifacts carry no wall-clock or host-specific data: two runs of
//! the same configuration produce byte-identical trees.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::artifact;
use crate::config::{Config, ZooRole};
use crate::dataset::{self, Dataset, PairSet};
use crate::error::{Error, Result};
use crate::generate::{self, GenConfig};
use crate::numerics::RngStream;
use crate::optimize::{self, FailureMatrix};
use crate::reference::{self, PgdConfig, StepRule};
use crate::siamese::{self, Meter, SiameseSystem, ZooConfig, ZooMember};
use crate::suite::{self, SetSpec};

pub const PIPELINE_FORMAT_VERSION: u32 = 1;

/// Canonical file layout under one output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("config.resolved.json")
    }

    pub fn stages_file(&self) -> PathBuf {
        self.root.join("stages.json")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn splits_file(&self) -> PathBuf {
        self.root.join("splits.json")
    }

    pub fn zoo_dir(&self) -> PathBuf {
        self.root.join("zoo")
    }

    pub fn zoo_manifest(&self) -> PathBuf {
        self.zoo_dir().join("zoo.json")
    }

    pub fn member_dir(&self, name: &str) -> PathBuf {
        self.zoo_dir().join(name)
    }

    pub fn pool_dir(&self, scheme: &str) -> PathBuf {
        self.root.join("pools").join(scheme)
    }

    pub fn attacks_file(&self) -> PathBuf {
        self.root.join("references").join("attacks.json")
    }

    pub fn certification_file(&self) -> PathBuf {
        self.root.join("references").join("certification.json")
    }

    pub fn selection_file(&self, scheme: &str) -> PathBuf {
        self.root.join("selection").join(format!("{scheme}.json"))
    }

    pub fn suite_dir(&self) -> PathBuf {
        self.root.join("suite")
    }

    /// Experiment reports live outside the deterministic artifact tree;
    /// they may contain wall-clock timings.
    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Splits {
    pub format_version: u32,
    pub seed: u64,
    /// Sorted pair indices into the full dataset; the three lists partition it.
    pub calibration: Vec<usize>,
    pub generation: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Disjoint calibration/generation/holdout split of `n` pairs by seeded
/// shuffle. Indices are sorted within each split so downstream row order is
/// independent of the shuffle.
pub fn make_splits(n: usize, cfg: &crate::config::SplitsSection) -> Result<Splits> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::root(cfg.seed);
    rng.shuffle(&mut idx);
    let n_cal = (cfg.calibration_fraction * n as f64).round() as usize;
    if n_cal < 2 || n_cal + 2 > n {
        return Err(Error::Config(format!(
            "calibration split of {n_cal} from {n} pairs leaves no room for generation/holdout"
        )));
    }
    let rest = n - n_cal;
    let n_gen = (cfg.generation_fraction * rest as f64).round() as usize;
    if n_gen < 1 || n_gen >= rest {
        return Err(Error::Config(format!(
            "generation split of {n_gen} from {rest} remaining pairs leaves no holdout"
        )));
    }
    let mut calibration: Vec<usize> = idx[..n_cal].to_vec();
    let mut generation: Vec<usize> = idx[n_cal..n_cal + n_gen].to_vec();
    let mut holdout: Vec<usize> = idx[n_cal + n_gen..].to_vec();
    calibration.sort_unstable();
    generation.sort_unstable();
    holdout.sort_unstable();
    Ok(Splits {
        format_version: PIPELINE_FORMAT_VERSION,
        seed: cfg.seed,
        calibration,
        generation,
        holdout,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZooEntry {
    pub name: String,
    pub role: ZooRole,
    pub clean_accuracy: f64,
    pub kappa: f64,
    pub train_seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZooManifest {
    pub format_version: u32,
    pub members: Vec<ZooEntry>,
}

#[derive(Debug)]
pub struct LoadedMember {
    pub name: String,
    pub role: ZooRole,
    pub member: ZooMember,
}

#[derive(Debug)]
pub struct LoadedZoo {
    pub members: Vec<LoadedMember>,
}

impl LoadedZoo {
    pub fn systems_with_role(&self, role: ZooRole) -> Vec<&SiameseSystem> {
        self.members
            .iter()
            .filter(|m| m.role == role)
            .map(|m| &m.member.system)
            .collect()
    }

    pub fn names_with_role(&self, role: ZooRole) -> Vec<String> {
        self.members
            .iter()
            .filter(|m| m.role == role)
            .map(|m| m.name.clone())
            .collect()
    }
}

pub fn load_zoo(layout: &Layout) -> Result<LoadedZoo> {
    let manifest: ZooManifest = artifact::read_json(&layout.zoo_manifest())?;
    if manifest.format_version != PIPELINE_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            what: "zoo.json".into(),
            found: manifest.format_version,
            supported: PIPELINE_FORMAT_VERSION,
        });
    }
    let mut members = Vec::with_capacity(manifest.members.len());
    for entry in &manifest.members {
        let member = siamese::load_system(&layout.member_dir(&entry.name))?;
        if member.system.id != entry.name {
            return Err(Error::Format {
                what: "zoo member".into(),
                detail: format!("directory {} holds system {}", entry.name, member.system.id),
            });
        }
        members.push(LoadedMember {
            name: entry.name.clone(),
            role: entry.role,
            member,
        });
    }
    Ok(LoadedZoo { members })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackEntry {
    pub system: String,
    pub scheme: String,
    pub robust_accuracy: f64,
    pub flips: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttacksManifest {
    pub format_version: u32,
    pub rule: StepRule,
    pub steps: usize,
    pub restarts: usize,
    pub pair_count: usize,
    pub entries: Vec<AttackEntry>,
}

impl AttacksManifest {
    /// Reference robust accuracies for `systems` under `scheme`, in order.
    pub fn reference_for(&self, scheme: &str, systems: &[String]) -> Result<Vec<f64>> {
        let by_key: HashMap<(&str, &str), f64> = self
            .entries
            .iter()
            .map(|e| ((e.system.as_str(), e.scheme.as_str()), e.robust_accuracy))
            .collect();
        systems
            .iter()
            .map(|s| {
                by_key.get(&(s.as_str(), scheme)).copied().ok_or_else(|| Error::Format {
                    what: "attacks.json".into(),
                    detail: format!("no entry for system {s} under scheme {scheme}"),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationEntry {
    pub system: String,
    pub scheme: String,
    pub score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationManifest {
    pub format_version: u32,
    pub samples: usize,
    pub entries: Vec<CertificationEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub format_version: u32,
    pub scheme: String,
    pub seed: u64,
    pub pool_candidates: usize,
    pub systems: Vec<String>,
    pub r_ref: Vec<f64>,
    pub selected: Vec<usize>,
    pub k: usize,
    pub fitness: f64,
    pub counts: Vec<u64>,
    pub rates: Vec<f64>,
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PipelineReport {
    pub config_digest: String,
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
}

struct Stage {
    name: &'static str,
    digest: String,
    outputs: Vec<PathBuf>,
}

fn stage_digest(name: &str, slice: serde_json::Value, upstream: &[&str]) -> Result<String> {
    artifact::digest_of(&serde_json::json!({
        "stage": name,
        "config": slice,
        "upstream": upstream,
    }))
}

fn plan(layout: &Layout, cfg: &Config) -> Result<Vec<Stage>> {
    let scheme_names: Vec<&str> = cfg.schemes.iter().map(|s| s.name.as_str()).collect();
    let d_dataset = stage_digest("dataset", serde_json::to_value(&cfg.dataset)?, &[])?;
    let d_zoo = stage_digest(
        "zoo",
        serde_json::json!({"splits": cfg.splits, "zoo": cfg.zoo}),
        &[&d_dataset],
    )?;
    let d_pools = stage_digest(
        "pools",
        serde_json::json!({"generation": cfg.generation, "schemes": cfg.schemes}),
        &[&d_zoo],
    )?;
    let d_references = stage_digest(
        "references",
        serde_json::json!({
            "attack": cfg.attack,
            "certification": cfg.certification,
            "schemes": cfg.schemes,
        }),
        &[&d_zoo],
    )?;
    let d_selection = stage_digest(
        "selection",
        serde_json::to_value(&cfg.selection)?,
        &[&d_pools, &d_references],
    )?;
    let d_suite = stage_digest("suite", serde_json::to_value(&cfg.suite)?, &[&d_selection])?;

    Ok(vec![
        Stage {
            name: "dataset",
            digest: d_dataset,
            outputs: vec![layout.dataset_dir().join("dataset.json")],
        },
        Stage {
            name: "zoo",
            digest: d_zoo,
            outputs: vec![layout.splits_file(), layout.zoo_manifest()],
        },
        Stage {
            name: "pools",
            digest: d_pools,
            outputs: scheme_names.iter().map(|n| layout.pool_dir(n).join("pool.json")).collect(),
        },
        Stage {
            name: "references",
            digest: d_references,
            outputs: vec![layout.attacks_file(), layout.certification_file()],
        },
        Stage {
            name: "selection",
            digest: d_selection,
            outputs: scheme_names.iter().map(|n| layout.selection_file(n)).collect(),
        },
        Stage {
            name: "suite",
            digest: d_suite,
            outputs: vec![layout.suite_dir().join("suite.json")],
        },
    ])
}

fn load_stage_state(layout: &Layout) -> BTreeMap<String, String> {
    artifact::read_json(&layout.stages_file()).unwrap_or_default()
}

/// Runs the pipeline, skipping stages whose digests and outputs are intact.
pub fn run(out: &Path, cfg: &Config, force: bool) -> Result<PipelineReport> {
    cfg.validate()?;
    let layout = Layout::new(out);
    std::fs::create_dir_all(out).map_err(|e| crate::error::io_err(out, e))?;
    artifact::write_json(&layout.resolved_config(), cfg)?;

    let stages = plan(&layout, cfg)?;
    let mut state = load_stage_state(&layout);
    let mut ran = Vec::new();
    let mut skipped = Vec::new();

    for stage in &stages {
        let intact = !force
            && state.get(stage.name) == Some(&stage.digest)
            && stage.outputs.iter().all(|p| p.exists());
        if intact {
            skipped.push(stage.name.to_string());
            continue;
        }
        // Invalidate before running so a crash mid-stage forces a rerun.
        state.remove(stage.name);
        artifact::write_json(&layout.stages_file(), &state)?;
        match stage.name {
            "dataset" => stage_dataset(&layout, cfg),
            "zoo" => stage_zoo(&layout, cfg),
            "pools" => stage_pools(&layout, cfg),
            "references" => stage_references(&layout, cfg),
            "selection" => stage_selection(&layout, cfg),
            "suite" => stage_suite(&layout, cfg),
            other => Err(Error::Config(format!("unknown stage {other}"))),
        }
        .map_err(|e| e.in_stage(stage.name))?;
        state.insert(stage.name.to_string(), stage.digest.clone());
        artifact::write_json(&layout.stages_file(), &state)?;
        ran.push(stage.name.to_string());
    }

    Ok(PipelineReport {
        config_digest: cfg.digest()?,
        ran,
        skipped,
    })
}

fn stage_dataset(layout: &Layout, cfg: &Config) -> Result<()> {
    let ds = dataset::build(&cfg.dataset)?;
    dataset::save(&layout.dataset_dir(), &ds)
}

fn stage_zoo(layout: &Layout, cfg: &Config) -> Result<()> {
    let ds = dataset::load(&layout.dataset_dir())?;
    let splits = make_splits(ds.set.len(), &cfg.splits)?;
    artifact::write_json(&layout.splits_file(), &splits)?;

    let calibration = ds.set.subset(&splits.calibration);
    let zoo_cfg = ZooConfig {
        archs: cfg.zoo.archs.clone(),
        epochs: cfg.zoo.epochs,
        lr: cfg.zoo.lr,
        triplet_margin: cfg.zoo.triplet_margin,
        triplets: cfg.zoo.triplets,
        triplet_sigma: cfg.zoo.triplet_sigma,
        accuracy_floor: cfg.zoo.accuracy_floor,
        root_seed: cfg.zoo.root_seed,
    };
    let zoo = siamese::build_zoo(&zoo_cfg, &ds.identities, &calibration)?;

    let mut entries = Vec::with_capacity(zoo.members.len());
    for (i, member) in zoo.members.iter().enumerate() {
        siamese::save_system(&layout.member_dir(&member.system.id), member)?;
        entries.push(ZooEntry {
            name: member.system.id.clone(),
            role: cfg.role_of(i),
            clean_accuracy: member.clean_accuracy,
            kappa: member.system.kappa,
            train_seed: member.train_seed,
        });
    }
    artifact::write_json(
        &layout.zoo_manifest(),
        &ZooManifest {
            format_version: PIPELINE_FORMAT_VERSION,
            members: entries,
        },
    )
}

/// Loads the dataset and splits and materializes the generation pair set,
/// the common input of every stage past the zoo.
pub fn generation_pairs(layout: &Layout) -> Result<(Dataset, Splits, PairSet)> {
    let ds = dataset::load(&layout.dataset_dir())?;
    let splits: Splits = artifact::read_json(&layout.splits_file())?;
    if splits.format_version != PIPELINE_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            what: "splits.json".into(),
            found: splits.format_version,
            supported: PIPELINE_FORMAT_VERSION,
        });
    }
    let pairs = ds.set.subset(&splits.generation);
    Ok((ds, splits, pairs))
}

fn stage_pools(layout: &Layout, cfg: &Config) -> Result<()> {
    let (ds, _, gen_pairs) = generation_pairs(layout)?;
    let zoo = load_zoo(layout)?;
    // Candidates come from the extra encoder alone: it never participates in
    // selection or scoring, so transfer to the graded systems is never trivial.
    let sources = zoo.systems_with_role(ZooRole::Extra);
    if sources.len() != 1 {
        return Err(Error::Domain(format!(
            "expected exactly one extra encoder, found {}",
            sources.len()
        )));
    }
    let meter = Meter::new();
    for (ki, section) in cfg.schemes.iter().enumerate() {
        let scheme = section.build(ds.config.side)?;
        let gen_cfg = GenConfig {
            iterations: cfg.generation.iterations,
            step_size: section.gen_step,
            // Distinct seed per scheme so per-run substreams never alias.
            seed: cfg.generation.seed.wrapping_add(ki as u64),
        };
        let pool = generate::generate_pool(&sources, &scheme, &gen_pairs, &gen_cfg, &meter)?;
        generate::save_pool(&layout.pool_dir(&section.name), &pool)?;
    }
    Ok(())
}

fn stage_references(layout: &Layout, cfg: &Config) -> Result<()> {
    let (ds, _, gen_pairs) = generation_pairs(layout)?;
    let zoo = load_zoo(layout)?;
    let meter = Meter::new();

    let mut attack_entries = Vec::new();
    let mut cert_entries = Vec::new();
    for (si, m) in zoo.members.iter().enumerate() {
        for (ki, section) in cfg.schemes.iter().enumerate() {
            let scheme = section.build(ds.config.side)?;
            let combo = (si * cfg.schemes.len() + ki) as u64;
            let pgd = PgdConfig {
                steps: cfg.attack.steps,
                restarts: cfg.attack.restarts,
                step_size: section.attack_step,
                rule: cfg.attack.rule,
                seed: cfg.attack.seed.wrapping_add(combo),
            };
            let report = reference::robust_accuracy(&m.member.system, &scheme, &gen_pairs, &pgd, &meter)?;
            attack_entries.push(AttackEntry {
                system: m.name.clone(),
                scheme: section.name.clone(),
                robust_accuracy: report.robust_accuracy,
                flips: report.outcomes.iter().filter(|o| o.flipped).count(),
            });
            if matches!(scheme.kind, crate::perturb::SchemeKind::L2 | crate::perturb::SchemeKind::LInf) {
                let clever = reference::clever_score(
                    &m.member.system,
                    &scheme,
                    &gen_pairs,
                    cfg.certification.samples,
                    cfg.certification.seed.wrapping_add(combo),
                    &meter,
                )?;
                cert_entries.push(CertificationEntry {
                    system: m.name.clone(),
                    scheme: section.name.clone(),
                    score: clever.score,
                });
            }
        }
    }
    artifact::write_json(
        &layout.attacks_file(),
        &AttacksManifest {
            format_version: PIPELINE_FORMAT_VERSION,
            rule: cfg.attack.rule,
            steps: cfg.attack.steps,
            restarts: cfg.attack.restarts,
            pair_count: gen_pairs.len(),
            entries: attack_entries,
        },
    )?;
    artifact::write_json(
        &layout.certification_file(),
        &CertificationManifest {
            format_version: PIPELINE_FORMAT_VERSION,
            samples: cfg.certification.samples,
            entries: cert_entries,
        },
    )
}

fn stage_selection(layout: &Layout, cfg: &Config) -> Result<()> {
    let (_, _, gen_pairs) = generation_pairs(layout)?;
    let zoo = load_zoo(layout)?;
    let tuning = zoo.systems_with_role(ZooRole::Tuning);
    let tuning_names = zoo.names_with_role(ZooRole::Tuning);
    let attacks: AttacksManifest = artifact::read_json(&layout.attacks_file())?;
    let meter = Meter::new();

    for (ki, section) in cfg.schemes.iter().enumerate() {
        let pool = generate::load_pool(&layout.pool_dir(&section.name))?;
        let matrix = FailureMatrix::build(&pool, &tuning, &gen_pairs, &meter)?;
        let r_ref = attacks.reference_for(&section.name, &tuning_names)?;
        let seed = cfg.selection.seed.wrapping_add(ki as u64);
        let ga_cfg = cfg.selection.ga_config(seed);
        let selection = optimize::ga_select(&matrix, &r_ref, &ga_cfg)?;
        let record = SelectionRecord {
            format_version: PIPELINE_FORMAT_VERSION,
            scheme: section.name.clone(),
            seed,
            pool_candidates: pool.candidates.len(),
            systems: tuning_names.clone(),
            r_ref: r_ref.clone(),
            selected: selection.selected,
            k: selection.k,
            fitness: selection.fitness,
            counts: selection.counts,
            rates: selection.rates,
            trace: selection.trace,
        };
        let path = layout.selection_file(&section.name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| crate::error::io_err(parent, e))?;
        }
        artifact::write_json(&path, &record)?;
    }
    Ok(())
}

fn stage_suite(layout: &Layout, cfg: &Config) -> Result<()> {
    let (_, _, gen_pairs) = generation_pairs(layout)?;
    let mut pools = Vec::with_capacity(cfg.schemes.len());
    let mut records: Vec<SelectionRecord> = Vec::with_capacity(cfg.schemes.len());
    for section in &cfg.schemes {
        pools.push(generate::load_pool(&layout.pool_dir(&section.name))?);
        let record: SelectionRecord = artifact::read_json(&layout.selection_file(&section.name))?;
        if record.pool_candidates != pools.last().unwrap().candidates.len() {
            return Err(Error::Format {
                what: "selection record".into(),
                detail: format!(
                    "scheme {}: selection saw {} candidates, pool holds {}",
                    section.name,
                    record.pool_candidates,
                    pools.last().unwrap().candidates.len()
                ),
            });
        }
        records.push(record);
    }
    let specs: Vec<SetSpec> = pools
        .iter()
        .zip(&records)
        .map(|(pool, record)| SetSpec {
            pool,
            selected: &record.selected,
        })
        .collect();
    let assembled = suite::assemble(&specs, &gen_pairs, cfg.suite.seed)?;
    suite::save_suite(&layout.suite_dir(), &assembled)
}

/// Shrunk run for tests: small dataset, short training, two schemes, tiny GA.
#[cfg(test)]
pub(crate) fn tiny_config() -> Config {
    use crate::config::SchemeSection;
    use crate::perturb::SchemeKind;

    let mut cfg = Config::default();
    cfg.dataset.identities = 6;
    cfg.dataset.side = 12;
    cfg.dataset.pairs = 64;
    cfg.zoo.epochs = 4;
    cfg.zoo.triplets = 192;
    // Shrunk training cannot promise the full floor.
    cfg.zoo.accuracy_floor = 0.5;
    cfg.generation.iterations = 12;
    cfg.attack.steps = 8;
    cfg.certification.samples = 4;
    cfg.selection.population = 12;
    cfg.selection.generations = 20;
    cfg.selection.elitism = 2;
    cfg.selection.k_min_frac = 0.02;
    cfg.selection.k_max_frac = 0.10;
    cfg.schemes = vec![
        SchemeSection {
            name: "linf".into(),
            kind: SchemeKind::LInf,
            budget: 0.08,
            gen_step: 0.05,
            attack_step: 0.01,
        },
        SchemeSection {
            name: "illum".into(),
            kind: SchemeKind::Illumination,
            budget: 0.25,
            gen_step: 0.3,
            attack_step: 0.03,
        },
    ];
    cfg
}
