use std::path::PathBuf;

use anyhow::Context;
use clap::{Subcommand, ValueEnum};
use semfuzz_core::campaign::{read_log, LOG_FILE};
use semfuzz_core::llm::{EmbeddingProvider, HashEmbedder};
use semfuzz_core::metrics::{campaign_validity_stats, coherence, jaccard, jaccard_from_counts, ValidityStats, DEFAULT_TAU};
use semfuzz_core::{CoverageMap, EmbeddingVector};
use serde_json::json;

use crate::{data, models, CmdResult, Failure};

#[derive(Clone, Copy, ValueEnum)]
pub enum Provider {
    /// Deterministic hash-based vectors (offline; no semantic meaning).
    Hash,
    /// The `embed` endpoint of a models config.
    Endpoint,
}

#[derive(Subcommand)]
pub enum MetricsCommand {
    /// Redundancy and diameter of every group in a groups file (JSON lines).
    Coherence {
        #[arg(long)]
        groups: PathBuf,
        #[arg(long, value_enum, default_value = "hash")]
        provider: Provider,
        /// Models config, required for `--provider endpoint`.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// Dimension of hash embeddings.
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
    /// Jaccard overlap of two coverage-set files, or of raw counts.
    Jaccard {
        a: Option<PathBuf>,
        b: Option<PathBuf>,
        /// `overlap,only_a,only_b` instead of files.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["a", "b"])]
        counts: Option<Vec<usize>>,
    },
    /// Valid-program rate and crash-on-valid rate of a campaign.
    Validity { campaign_dir: PathBuf },
}

pub fn run(cmd: MetricsCommand) -> CmdResult {
    match cmd {
        MetricsCommand::Coherence {
            groups,
            provider,
            models: models_path,
            tau,
            dim,
        } => {
            let groups = data::read_groups(&groups)?;
            let provider: Box<dyn EmbeddingProvider<f64>> = match provider {
                Provider::Hash => Box::new(HashEmbedder::new(dim, 0)),
                Provider::Endpoint => {
                    let path = models_path
                        .ok_or_else(|| Failure::config(anyhow::anyhow!("--provider endpoint needs --models")))?;
                    Box::new(models::client(&models::load_models(&path)?)?)
                }
            };
            for g in &groups {
                let texts: Vec<String> = g.descriptions().into_iter().map(String::from).collect();
                let vecs: Vec<EmbeddingVector> = provider.embed(&texts)?;
                let record = match coherence(&vecs, tau) {
                    Ok(c) => json!({
                        "group_id": g.group_id(),
                        "size": g.len(),
                        "redundancy": c.redundancy,
                        "diameter": c.diameter,
                        "pair_count": c.pair_count,
                        "filtered_count": c.filtered_count,
                        "flags": if c.no_pairs { vec!["no_pairs"] } else { vec![] },
                    }),
                    Err(e) => json!({
                        "group_id": g.group_id(),
                        "size": g.len(),
                        "error": e.to_string(),
                    }),
                };
                println!("{record}");
            }
            Ok(())
        }
        MetricsCommand::Jaccard { a, b, counts } => {
            let j = match (counts, a, b) {
                (Some(c), _, _) => match c[..] {
                    [overlap, only_a, only_b] => jaccard_from_counts::<f64>(overlap, only_a, only_b),
                    _ => return Err(Failure::config(anyhow::anyhow!("--counts takes exactly three numbers"))),
                },
                (None, Some(a), Some(b)) => {
                    let ma = CoverageMap::read_sorted(&a).with_context(|| format!("reading {}", a.display()))?;
                    let mb = CoverageMap::read_sorted(&b).with_context(|| format!("reading {}", b.display()))?;
                    jaccard(&ma, &mb).map_err(Failure::config)?
                }
                _ => return Err(Failure::config(anyhow::anyhow!("give two coverage files or --counts"))),
            };
            println!(
                "{}",
                json!({
                    "jaccard": j.value,
                    "percent": j.value * 100.0,
                    "overlap": j.overlap,
                    "union": j.union,
                    "degenerate": j.degenerate,
                })
            );
            Ok(())
        }
        MetricsCommand::Validity { campaign_dir } => {
            let reports = read_log(&campaign_dir.join(LOG_FILE))?;
            let v: ValidityStats<f64> = campaign_validity_stats(&reports);
            println!("{}", serde_json::to_string(&v)?);
            Ok(())
        }
    }
}
