//! The coverage-guided feedback loop.
//!
//! Each iteration takes up to `k` seed features, drawing some from the
//! novel queue and the rest uniformly from the pool, completes them into a
//! group, instantiates a program, compiles it and merges its coverage. When
//! global coverage grows, the glue features the group model contributed join
//! the pool and the novel queue, and every member of the group is rewarded.
//!
//! Iteration `i` draws all of its randomness from a generator seeded with
//! `(campaign seed, i)`, so a campaign resumed from a snapshot replays the
//! same choices as an uninterrupted one.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature::{Feature, FeatureId, FeaturePool, GroupSource, NovelQueue, PersistError};
use crate::harness::{classify_crash, CoverageMap, CrashSignature, Harness, HarnessError, OutcomeStatus, UnitKind};
use crate::hashing::mix_seed;
use crate::instantiation::instantiate;
use crate::llm::{ChatModel, ModelParams, Role};
use crate::metrics::{campaign_validity_stats, ValidityStats};
use crate::synthesis::{complete_group, random_group};

pub const STATE_FILE: &str = "state.json";
pub const POOL_FILE: &str = "pool.jsonl";
pub const LOG_FILE: &str = "iterations.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const COVERAGE_FILE: &str = "coverage.txt";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("the feature pool is empty")]
    EmptyPool,
    #[error("campaign i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("corrupt campaign state: {0}")]
    Corrupt(String),
}

/// Fresh generator for iteration `i` of a campaign seeded with `seed`.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, iteration))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    /// Iterations that produced a program.
    pub generated: u64,
    pub valid: u64,
    pub rejects: u64,
    pub crashes_total: u64,
    pub crashes_unique: u64,
    pub crashes_counted_valid: u64,
    pub hangs: u64,
    pub ooms: u64,
    pub model_failures: u64,
    pub instantiation_failures: u64,
    pub coverage_unavailable: u64,
    pub promoted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashEntry {
    pub signature: CrashSignature,
    pub first_iteration: u64,
    pub count: u64,
}

/// Everything needed to continue a campaign. The pool is persisted
/// separately as JSONL next to the rest of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub seed: u64,
    /// Index of the next iteration to run.
    pub iteration: u64,
    #[serde(skip)]
    pub pool: FeaturePool,
    pub novel: NovelQueue,
    pub global_cov: CoverageMap,
    pub stats: Stats,
    /// Keyed by `kind:key`.
    pub crash_index: BTreeMap<String, CrashEntry>,
    /// `(iteration, |coverage|)` at every iteration that grew coverage.
    pub coverage_curve: Vec<(u64, usize)>,
}

impl CampaignState {
    pub fn new(pool: FeaturePool, seed: u64, unit_kind: UnitKind) -> Self {
        CampaignState {
            seed,
            iteration: 0,
            pool,
            novel: NovelQueue::new(),
            global_cov: CoverageMap::new(unit_kind),
            stats: Stats::default(),
            crash_index: BTreeMap::new(),
            coverage_curve: Vec::new(),
        }
    }

    /// Write `state.json` and `pool.jsonl` into `dir`, each via rename so a
    /// crash mid-write leaves the previous snapshot intact.
    pub fn save(&self, dir: &Path) -> Result<(), CampaignError> {
        fs::create_dir_all(dir)?;
        let tmp_pool = dir.join(format!("{POOL_FILE}.tmp"));
        self.pool.save(&tmp_pool)?;
        let tmp_state = dir.join(format!("{STATE_FILE}.tmp"));
        fs::write(&tmp_state, serde_json::to_vec_pretty(self).map_err(io::Error::other)?)?;
        fs::rename(tmp_pool, dir.join(POOL_FILE))?;
        fs::rename(tmp_state, dir.join(STATE_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CampaignError> {
        let text = fs::read_to_string(dir.join(STATE_FILE))?;
        let mut state: CampaignState =
            serde_json::from_str(&text).map_err(|e| CampaignError::Corrupt(format!("{STATE_FILE}: {e}")))?;
        state.pool = FeaturePool::load(&dir.join(POOL_FILE))?;
        if let Some(id) = state.novel.iter().find(|id| !state.pool.contains(id)) {
            return Err(CampaignError::Corrupt(format!("novel feature {id} missing from the pool")));
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u64,
    /// Ids taken from the novel queue (`k_N` of them).
    pub novel_taken: Vec<FeatureId>,
    pub seed_ids: Vec<FeatureId>,
    pub group_ids: Vec<FeatureId>,
    pub group_source: Option<GroupSource>,
    pub promoted_ids: Vec<FeatureId>,
    pub outcome_status: Option<OutcomeStatus>,
    pub signature: Option<CrashSignature>,
    pub new_crash: bool,
    pub crash_counted_valid: bool,
    pub cov_delta: usize,
    pub coverage_size: usize,
    pub coverage_unavailable: bool,
    pub model_failure: bool,
    pub instantiation_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub k: usize,
    pub target_group_size: usize,
    pub group_retries: u32,
    pub instantiate_retries: u32,
    pub novel_queue_cap: Option<usize>,
    pub group_params: ModelParams,
    pub instantiate_params: ModelParams,
}

impl Default for LoopSettings {
    fn default() -> Self {
        LoopSettings {
            k: 2,
            target_group_size: 4,
            group_retries: 2,
            instantiate_retries: 2,
            novel_queue_cap: None,
            group_params: ModelParams::for_role(Role::Group),
            instantiate_params: ModelParams::for_role(Role::Instantiate),
        }
    }
}

/// Seed selection: `k_N ~ U{0..=min(k, |N|)}` ids from the front of the
/// novel queue, then `k - k_N` distinct pool features not already chosen.
/// Returns the seed and the queue with the taken ids removed.
pub fn select_seed_set<R: Rng + ?Sized>(
    pool: &FeaturePool,
    novel: &NovelQueue,
    k: usize,
    rng: &mut R,
) -> (Vec<Feature>, NovelQueue, Vec<FeatureId>) {
    let mut queue = novel.clone();
    let k_n = rng.random_range(0..=k.min(queue.len()));
    let taken = queue.dequeue(k_n);
    let mut seed: Vec<Feature> = taken.iter().filter_map(|id| pool.get(id).cloned()).collect();
    let exclude: HashSet<FeatureId> = seed.iter().map(|f| f.id.clone()).collect();
    seed.extend(pool.sample_excluding(k - seed.len(), &exclude, rng));
    (seed, queue, taken)
}

/// Run iteration `state.iteration` and advance the state.
///
/// A harness error is fatal and leaves the state untouched, so the same
/// iteration can be retried. A failed instantiation is counted and skipped;
/// novel ids it had taken stay queued.
pub fn run_iteration<G, I, H>(
    state: &mut CampaignState,
    group_model: &G,
    inst_model: &I,
    harness: &mut H,
    settings: &LoopSettings,
) -> Result<IterationReport, CampaignError>
where
    G: ChatModel + ?Sized,
    I: ChatModel + ?Sized,
    H: Harness + ?Sized,
{
    if state.pool.is_empty() {
        return Err(CampaignError::EmptyPool);
    }
    let i = state.iteration;
    let mut rng = iteration_rng(state.seed, i);
    let (seed, queue_after, taken) = select_seed_set(&state.pool, &state.novel, settings.k, &mut rng);
    let mut report = IterationReport {
        iteration: i,
        novel_taken: taken,
        seed_ids: seed.iter().map(|f| f.id.clone()).collect(),
        coverage_size: state.global_cov.len(),
        ..IterationReport::default()
    };

    let group = match complete_group(
        &seed,
        settings.target_group_size,
        group_model,
        &settings.group_params,
        settings.group_retries,
        i,
    ) {
        Ok(g) => g,
        Err(e) => {
            log::warn!("iteration {i}: group completion failed ({e}); using a random group");
            report.model_failure = true;
            state.stats.model_failures += 1;
            random_group(&seed, &state.pool, settings.target_group_size, &mut rng)
                .map_err(|e| CampaignError::Corrupt(e.to_string()))?
        }
    };
    report.group_ids = group.ids().cloned().collect();
    report.group_source = Some(group.source);

    let program = match instantiate(
        &group,
        inst_model,
        &settings.instantiate_params,
        settings.instantiate_retries,
        i,
    ) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("iteration {i}: {e}");
            report.instantiation_failed = true;
            report.novel_taken.clear();
            state.stats.instantiation_failures += 1;
            state.iteration += 1;
            return Ok(report);
        }
    };

    let exec = harness.execute(i, &program)?;
    state.novel = queue_after;
    state.stats.generated += 1;
    let status = exec.outcome.status;
    report.outcome_status = Some(status);
    match status {
        OutcomeStatus::Valid => state.stats.valid += 1,
        OutcomeStatus::Reject => state.stats.rejects += 1,
        OutcomeStatus::Hang => state.stats.hangs += 1,
        OutcomeStatus::Oom => state.stats.ooms += 1,
        OutcomeStatus::Crash => state.stats.crashes_total += 1,
    }
    if let Ok(sig) = classify_crash(&exec.outcome) {
        report.crash_counted_valid = exec.crash_counted_valid;
        if exec.crash_counted_valid {
            state.stats.crashes_counted_valid += 1;
        }
        let entry = state
            .crash_index
            .entry(format!("{}:{}", sig.kind, sig.key))
            .or_insert_with(|| {
                report.new_crash = true;
                CrashEntry {
                    signature: sig.clone(),
                    first_iteration: i,
                    count: 0,
                }
            });
        entry.count += 1;
        if report.new_crash {
            state.stats.crashes_unique += 1;
        }
        report.signature = Some(sig);
    }

    let delta = match exec.coverage {
        Ok(snap) => match state.global_cov.merge(&snap) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("iteration {i}: {e}");
                report.coverage_unavailable = true;
                0
            }
        },
        Err(e) => {
            log::debug!("iteration {i}: {e}");
            report.coverage_unavailable = true;
            0
        }
    };
    if report.coverage_unavailable {
        state.stats.coverage_unavailable += 1;
    }
    report.cov_delta = delta;
    report.coverage_size = state.global_cov.len();

    if delta > 0 {
        state.coverage_curve.push((i, state.global_cov.len()));
        if group.source == GroupSource::Synthesized {
            let seed_ids: HashSet<&FeatureId> = report.seed_ids.iter().collect();
            for f in group.iter().filter(|f| !seed_ids.contains(&f.id)) {
                state.pool.insert(f.clone()).map_err(|e| CampaignError::Corrupt(e.to_string()))?;
                state.novel.enqueue(f.id.clone());
                report.promoted_ids.push(f.id.clone());
            }
            state.stats.promoted += report.promoted_ids.len() as u64;
        }
        for id in group.ids() {
            state.pool.bump_reward(id);
        }
    }
    if let Some(cap) = settings.novel_queue_cap {
        state.novel.truncate_front(cap);
    }
    state.iteration += 1;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Stop once `state.iteration` reaches this.
    pub max_iterations: u64,
    pub wall_clock_secs: Option<f64>,
    pub snapshot_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub iterations: u64,
    pub elapsed_secs: f64,
    pub stats: Stats,
    pub validity: ValidityStats<f64>,
    pub coverage_unit_kind: UnitKind,
    pub coverage_units: usize,
    pub coverage_curve: Vec<(u64, usize)>,
    pub unique_crashes: Vec<CrashEntry>,
    pub pool_size: usize,
    pub novel_queue_len: usize,
    /// Collected features ranked by reward, highest first (top 20).
    pub top_rewarded: Vec<(FeatureId, u64)>,
}

/// Drop log records at or beyond `next_iteration` (left over from a run that
/// got further than its last snapshot).
pub fn truncate_log(path: &Path, next_iteration: u64) -> io::Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let keep: Vec<String> = BufReader::new(File::open(path)?)
        .lines()
        .collect::<io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|l| {
            serde_json::from_str::<IterationReport>(l).is_ok_and(|r| r.iteration < next_iteration)
        })
        .collect();
    let mut text = keep.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text)
}

pub fn read_log(path: &Path) -> Result<Vec<IterationReport>, CampaignError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CampaignError::Corrupt(format!("{LOG_FILE} line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

/// Drive the loop until the budget is spent, snapshotting into `out_dir`
/// every `snapshot_every` iterations and once more at the end, then write
/// the summary report and the final coverage listing.
pub fn run_campaign<G, I, H>(
    state: &mut CampaignState,
    group_model: &G,
    inst_model: &I,
    harness: &mut H,
    settings: &LoopSettings,
    opts: &RunOptions,
    out_dir: &Path,
) -> Result<CampaignReport, CampaignError>
where
    G: ChatModel + ?Sized,
    I: ChatModel + ?Sized,
    H: Harness + ?Sized,
{
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    truncate_log(&log_path, state.iteration)?;
    let mut log = BufWriter::new(OpenOptions::new().create(true).append(true).open(&log_path)?);
    let start = Instant::now();
    let snapshot_every = opts.snapshot_every.max(1);
    let mut result = Ok(());
    while state.iteration < opts.max_iterations {
        if opts.wall_clock_secs.is_some_and(|w| start.elapsed().as_secs_f64() >= w) {
            log::info!("wall-clock budget exhausted at iteration {}", state.iteration);
            break;
        }
        let report = match run_iteration(state, group_model, inst_model, harness, settings) {
            Ok(r) => r,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        serde_json::to_writer(&mut log, &report).map_err(io::Error::other)?;
        log.write_all(b"\n")?;
        if let Some(sig) = report.signature.as_ref().filter(|_| report.new_crash) {
            log::info!("iteration {}: new crash {}:{}", report.iteration, sig.kind, sig.key);
        }
        if state.iteration.is_multiple_of(snapshot_every) {
            log.flush()?;
            state.save(out_dir)?;
        }
    }
    log.flush()?;
    drop(log);
    state.save(out_dir)?;
    result?;

    let reports = read_log(&log_path)?;
    let mut top: Vec<(FeatureId, u64)> = state
        .pool
        .iter()
        .filter(|f| f.reward > 0)
        .map(|f| (f.id.clone(), f.reward))
        .collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top.truncate(20);
    let report = CampaignReport {
        iterations: state.iteration,
        elapsed_secs: start.elapsed().as_secs_f64(),
        stats: state.stats.clone(),
        validity: campaign_validity_stats(&reports),
        coverage_unit_kind: state.global_cov.unit_kind,
        coverage_units: state.global_cov.len(),
        coverage_curve: state.coverage_curve.clone(),
        unique_crashes: state.crash_index.values().cloned().collect(),
        pool_size: state.pool.len(),
        novel_queue_len: state.novel.len(),
        top_rewarded: top,
    };
    fs::write(
        out_dir.join(REPORT_FILE),
        serde_json::to_vec_pretty(&report).map_err(io::Error::other)?,
    )?;
    state.global_cov.write_sorted(&out_dir.join(COVERAGE_FILE))?;
    Ok(report)
}

/// Where a campaign keeps per-iteration compiler artifacts.
pub fn runs_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("runs")
}
