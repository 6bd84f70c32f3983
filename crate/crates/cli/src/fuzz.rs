use std::fs;

use anyhow::Context;
use semfuzz_core::campaign::{run_campaign, runs_dir, CampaignError, LoopSettings, RunOptions, STATE_FILE};
use semfuzz_core::config::CampaignConfig;
use semfuzz_core::harness::{CompilerHarness, Harness};
use semfuzz_core::llm::Role;
use semfuzz_core::{CampaignState, FeaturePool};

use crate::{models, CmdResult, Failure, FuzzArgs, EXIT_HARNESS};

pub fn run(a: FuzzArgs) -> CmdResult {
    let cfg = CampaignConfig::load(&a.config).map_err(Failure::config)?;
    if a.explain_config {
        print!("{}", cfg.explain());
        return Ok(());
    }
    let out = &cfg.output_dir;
    let has_snapshot = out.join(STATE_FILE).exists();
    if has_snapshot && !a.resume {
        return Err(Failure::config(anyhow::anyhow!(
            "{} already holds a campaign; pass --resume or pick a fresh output_dir",
            out.display()
        )));
    }

    let mut harness = CompilerHarness::new(cfg.compiler.clone(), runs_dir(out)).map_err(|e| Failure {
        code: EXIT_HARNESS,
        error: e.into(),
    })?;
    let mut state = if a.resume && has_snapshot {
        let s = CampaignState::load(out).with_context(|| format!("loading snapshot from {}", out.display()))?;
        if s.seed != cfg.seed {
            return Err(Failure::config(anyhow::anyhow!(
                "snapshot was taken with seed {} but the config says {}",
                s.seed,
                cfg.seed
            )));
        }
        log::info!("resuming at iteration {}", s.iteration);
        s
    } else {
        let pool = FeaturePool::load(&cfg.pool).with_context(|| format!("loading pool {}", cfg.pool.display()))?;
        if pool.is_empty() {
            return Err(Failure::config(anyhow::anyhow!("pool {} is empty", cfg.pool.display())));
        }
        CampaignState::new(pool, cfg.seed, harness.unit_kind())
    };
    fs::create_dir_all(out)?;

    let client = models::client(&cfg.models)?;
    let settings = LoopSettings {
        k: cfg.k,
        target_group_size: cfg.target_group_size,
        group_retries: cfg.models.group_retries,
        instantiate_retries: cfg.models.instantiate_retries,
        novel_queue_cap: cfg.novel_queue_cap,
        group_params: client.params(Role::Group),
        instantiate_params: client.params(Role::Instantiate),
    };
    let opts = RunOptions {
        max_iterations: cfg.budget.iterations,
        wall_clock_secs: cfg.budget.wall_clock_secs,
        snapshot_every: cfg.budget.snapshot_every,
    };
    let report = match run_campaign(&mut state, &client, &client, &mut harness, &settings, &opts, out) {
        Ok(r) => r,
        Err(CampaignError::Harness(e)) => {
            return Err(Failure {
                code: EXIT_HARNESS,
                error: anyhow::Error::new(e).context(format!("iteration {}", state.iteration)),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let s = &report.stats;
    eprintln!(
        "{} iterations in {:.1}s: {} programs, {} valid, {} rejected, {} crashes ({} unique), {} hangs; \
         {} coverage units; pool {} features",
        report.iterations,
        report.elapsed_secs,
        s.generated,
        s.valid,
        s.rejects,
        s.crashes_total,
        s.crashes_unique,
        s.hangs,
        report.coverage_units,
        report.pool_size,
    );
    println!("{}", out.join(semfuzz_core::campaign::REPORT_FILE).display());
    Ok(())
}
