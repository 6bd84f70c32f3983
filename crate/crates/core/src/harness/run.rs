use std::fs;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use regex::RegexSet;
use serde::{Deserialize, Serialize};

use super::config::CompilerConfig;
use super::coverage::{measure_coverage, CoverageUnavailable, UnitKind};
use super::outcome::{classify_status, CompileOutcome, CrashPatterns, OutcomeStatus, RawObservation};
use super::signature::{classify_crash, CrashSignature};
use super::{Execution, Harness, HarnessError};
use crate::instantiation::{Language, SourceProgram};

pub const COVERAGE_ENV: &str = "SEMFUZZ_COVERAGE_OUT";

const POLL: Duration = Duration::from_millis(5);

fn source_name(lang: Language) -> &'static str {
    match lang {
        Language::C => "input.c",
        Language::Cpp => "input.cpp",
    }
}

fn template_for(cfg: &CompilerConfig, lang: Language) -> &[String] {
    match lang {
        Language::C => &cfg.command,
        Language::Cpp => cfg.cpp_command.as_deref().unwrap_or(&cfg.command),
    }
}

/// Read a pipe to EOF, keeping at most `cap` bytes.
fn drain_capped(mut r: impl Read, cap: usize) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    let mut truncated = false;
    loop {
        match r.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                if n > room {
                    truncated = true;
                }
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    (kept, truncated)
}

fn spawn(argv: &[String], cfg: &CompilerConfig, cwd: &Path) -> Result<Child, HarnessError> {
    let (prog, args) = argv
        .split_first()
        .ok_or_else(|| HarnessError::Config("empty compiler command".into()))?;
    let mut cmd = Command::new(prog);
    cmd.args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(p) = &cfg.coverage_path {
        cmd.env(COVERAGE_ENV, p);
    }
    if let Some(limit) = cfg.memory_limit_bytes {
        // SAFETY: only async-signal-safe calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                let rl = libc::rlimit {
                    rlim_cur: limit as libc::rlim_t,
                    rlim_max: limit as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &rl) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }
    cmd.spawn().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::CompilerMissing(PathBuf::from(prog))
        } else {
            HarnessError::Spawn(e)
        }
    })
}

fn on_path(prog: &str) -> bool {
    if prog.contains('/') {
        return Path::new(prog).is_file();
    }
    std::env::var_os("PATH")
        .is_some_and(|paths| std::env::split_paths(&paths).any(|dir| dir.join(prog).is_file()))
}

fn observe(argv: &[String], cfg: &CompilerConfig, cwd: &Path) -> Result<(RawObservation, f64), HarnessError> {
    let start = Instant::now();
    let mut child = spawn(argv, cfg, cwd)?;
    let stderr = child.stderr.take().expect("stderr is piped");
    let cap = cfg.stderr_cap_bytes;
    let reader = thread::spawn(move || drain_capped(stderr, cap));

    let deadline = start + Duration::from_secs_f64(cfg.timeout_secs);
    let mut timed_out = false;
    let status = loop {
        if let Some(st) = child.try_wait()? {
            break st;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            // The child leads its own process group; take down helpers too.
            unsafe {
                libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
            }
            break child.wait()?;
        }
        thread::sleep(POLL);
    };
    let wall = start.elapsed().as_secs_f64();
    let (bytes, truncated) = reader.join().unwrap_or_default();
    Ok((
        RawObservation {
            exit_code: status.code(),
            signal: status.signal(),
            timed_out,
            stderr: String::from_utf8_lossy(&bytes).into_owned(),
            stderr_truncated: truncated,
        },
        wall,
    ))
}

fn compile_as(
    program: &SourceProgram,
    lang: Language,
    cfg: &CompilerConfig,
    patterns: &CrashPatterns,
    dir: &Path,
) -> Result<CompileOutcome, HarnessError> {
    let input = dir.join(source_name(lang));
    fs::write(&input, &program.code)?;
    let output = dir.join("out.o");
    let template = template_for(cfg, lang);
    let argv = cfg.expand(template, &input.to_string_lossy(), &output.to_string_lossy());
    let cwd = cfg.workdir.as_deref().unwrap_or(dir);
    let (observation, wall) = observe(&argv, cfg, cwd)?;
    Ok(CompileOutcome {
        status: classify_status(&observation, patterns),
        observation,
        wall_time_secs: wall,
        command: argv,
        language: lang,
    })
}

/// Compile `program` once inside `dir`. A rejection whose diagnostics show
/// the wrong frontend was picked is retried once with the other language.
pub fn run_compile(program: &SourceProgram, cfg: &CompilerConfig, dir: &Path) -> Result<CompileOutcome, HarnessError> {
    let patterns = CrashPatterns::from_config(cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mismatch =
        RegexSet::new(&cfg.language_mismatch_patterns).map_err(|e| HarnessError::Config(e.to_string()))?;
    run_with(program, cfg, &patterns, &mismatch, dir)
}

fn run_with(
    program: &SourceProgram,
    cfg: &CompilerConfig,
    patterns: &CrashPatterns,
    mismatch: &RegexSet,
    dir: &Path,
) -> Result<CompileOutcome, HarnessError> {
    fs::create_dir_all(dir)?;
    let first = compile_as(program, program.language, cfg, patterns, dir)?;
    if first.status != OutcomeStatus::Reject || !mismatch.is_match(first.stderr()) {
        return Ok(first);
    }
    let other = match program.language {
        Language::C if cfg.cpp_command.is_some() => Language::Cpp,
        Language::Cpp => Language::C,
        _ => return Ok(first),
    };
    log::debug!("retrying {} as {:?} after a language mismatch", program.group_id, other);
    compile_as(program, other, cfg, patterns, dir)
}

/// What `outcome.rec` holds for every iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub iteration: u64,
    pub group_id: String,
    pub outcome: CompileOutcome,
    pub signature: Option<CrashSignature>,
    pub crash_counted_valid: bool,
}

pub const OUTCOME_FILE: &str = "outcome.rec";

/// Harness over a real compiler binary. Each iteration gets its own
/// directory `<campaign_dir>/<iteration>/`.
pub struct CompilerHarness {
    cfg: CompilerConfig,
    patterns: CrashPatterns,
    mismatch: RegexSet,
    campaign_dir: PathBuf,
}

impl CompilerHarness {
    /// Fails with [`HarnessError::CompilerMissing`] if a compiler driver
    /// cannot be found, so a campaign does not start against nothing.
    pub fn new(cfg: CompilerConfig, campaign_dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        cfg.validate()?;
        for argv in [Some(&cfg.command), cfg.cpp_command.as_ref()].into_iter().flatten() {
            if !on_path(&argv[0]) {
                return Err(HarnessError::CompilerMissing(PathBuf::from(&argv[0])));
            }
        }
        let patterns = CrashPatterns::from_config(&cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mismatch =
            RegexSet::new(&cfg.language_mismatch_patterns).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(CompilerHarness {
            cfg,
            patterns,
            mismatch,
            campaign_dir: campaign_dir.into(),
        })
    }

    pub fn config(&self) -> &CompilerConfig {
        &self.cfg
    }

    fn accepted_by_reference(&self, program: &SourceProgram, lang: Language, dir: &Path) -> bool {
        let Some(template) = &self.cfg.secondary_command else { return false };
        let input = dir.join(source_name(lang));
        let _ = fs::write(&input, &program.code);
        let output = dir.join("ref.o");
        let argv = self
            .cfg
            .expand(template, &input.to_string_lossy(), &output.to_string_lossy());
        let mut ref_cfg = self.cfg.clone();
        ref_cfg.coverage_path = None;
        match observe(&argv, &ref_cfg, dir) {
            Ok((obs, _)) => obs.exit_code == Some(0) && !obs.timed_out,
            Err(e) => {
                log::warn!("reference compiler failed to run: {e}");
                false
            }
        }
    }
}

impl Harness for CompilerHarness {
    fn execute(&mut self, iteration: u64, program: &SourceProgram) -> Result<Execution, HarnessError> {
        let dir = self.campaign_dir.join(iteration.to_string());
        fs::create_dir_all(&dir)?;
        fs::write(
            self.campaign_dir.join(format!("{iteration}.{}", program.language.extension())),
            &program.code,
        )?;
        if let Some(p) = &self.cfg.coverage_path {
            // A stale report must not be mistaken for this run's coverage.
            let _ = fs::remove_file(p);
        }
        let outcome = run_with(program, &self.cfg, &self.patterns, &self.mismatch, &dir)?;
        let coverage = if outcome.status == OutcomeStatus::Hang {
            Err(CoverageUnavailable("compiler timed out".into()))
        } else {
            measure_coverage(&dir, &self.cfg)
        };
        let signature = classify_crash(&outcome).ok();
        let crash_counted_valid =
            signature.is_some() && self.accepted_by_reference(program, outcome.language, &dir);

        fs::write(dir.join("stderr.txt"), outcome.stderr())?;
        let rec = OutcomeRecord {
            iteration,
            group_id: program.group_id.clone(),
            outcome: outcome.clone(),
            signature,
            crash_counted_valid,
        };
        fs::write(
            dir.join(OUTCOME_FILE),
            serde_json::to_string_pretty(&rec).map_err(std::io::Error::other)?,
        )?;
        Ok(Execution {
            outcome,
            coverage,
            crash_counted_valid,
        })
    }

    fn unit_kind(&self) -> UnitKind {
        UnitKind::for_mode(self.cfg.coverage_mode)
    }
}
