//! Command-line front door. Every subcommand is deterministic given its
//! flags (all randomness flows through explicit seeds), and file outputs are
//! written atomically: compute first, then temp-file + rename, so failed runs
//! never leave truncated CSV or JSON behind.
//!
//! Exit codes: 0 success, 1 usage error (flags, config values), 2 data error
//! (unreadable or invalid inputs), 3 numerical error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use pinhole_core::asv;
use pinhole_core::dispersion;
use pinhole_core::embedding::{load_embeddings, write_atomic};
use pinhole_core::mapping::{anonymize_traced, MappingConfig};
use pinhole_core::sim;
use pinhole_core::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(
    name = "pinhole",
    version,
    about = "Embedding-space evaluation of speaker-anonymization mapping strategies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    /// Same-side evaluation: enrollment and test sets scored as given.
    Link,
    /// Cross-side evaluation: enroll on originals, test on anonymized
    /// versions of the same utterances.
    Deid,
}

#[derive(Subcommand)]
enum Command {
    /// Run the seeded simulation pipeline and write report.json, report.md,
    /// and all generated embedding CSVs into an output directory.
    Simulate {
        /// JSON config; defaults to the built-in desk-scale configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (created if missing).
        #[arg(long, required_unless_present = "emit_default_config")]
        out: Option<PathBuf>,
        /// Print the default config JSON to stdout and exit.
        #[arg(long)]
        emit_default_config: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Anonymize an embedding CSV against a cohort CSV; writes the output
    /// CSV plus a `<out>.meta.json` sidecar with the config and per-utterance
    /// pseudo-speaker hashes.
    Anonymize {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        /// Mapping config JSON (strategy, mode, rho, noise_sigma, seeds).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scatter analysis of one embedding CSV; prints the report to stdout.
    Dispersion {
        #[arg(long)]
        embeddings: PathBuf,
        /// Ridge added to S_w as ridge·(trace/d)·I before the eigensolve.
        #[arg(long, default_value_t = dispersion::DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Trial generation, scoring, and EER in one step.
    Eval {
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Persist the generated trial list.
        #[arg(long)]
        trials_out: Option<PathBuf>,
        /// Persist the scored trials.
        #[arg(long)]
        scores_out: Option<PathBuf>,
        /// Evaluate each partition label separately and report both
        /// unweighted and trial-weighted average EERs.
        #[arg(long)]
        per_partition: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Generate a trial list (`enroll_spk test_utt target|nontarget` lines).
    Trials {
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cap on nontarget trials per test utterance (default: all).
        #[arg(long)]
        max_nontarget: Option<usize>,
        /// Output path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an existing trial list (`enroll_spk test_utt score` lines).
    Score {
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute EER from a trial list and a score file.
    Eer {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err.class() {
                ErrorClass::Usage => 1u8,
                ErrorClass::Data => 2u8,
                ErrorClass::Numerical => 3u8,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            emit_default_config,
            format,
        } => cmd_simulate(config.as_deref(), out.as_deref(), emit_default_config, format),
        Command::Anonymize {
            embeddings,
            cohort,
            config,
            out,
        } => cmd_anonymize(&embeddings, &cohort, &config, &out),
        Command::Dispersion {
            embeddings,
            ridge,
            format,
        } => cmd_dispersion(&embeddings, ridge, format),
        Command::Eval {
            enroll,
            test,
            mode,
            seed,
            trials_out,
            scores_out,
            per_partition,
            format,
        } => cmd_eval(
            &enroll,
            &test,
            mode,
            seed,
            trials_out.as_deref(),
            scores_out.as_deref(),
            per_partition,
            format,
        ),
        Command::Trials {
            enroll,
            test,
            seed,
            max_nontarget,
            out,
        } => cmd_trials(&enroll, &test, seed, max_nontarget, out.as_deref()),
        Command::Score {
            enroll,
            test,
            trials,
            out,
        } => cmd_score(&enroll, &test, &trials, out.as_deref()),
        Command::Eer {
            trials,
            scores,
            format,
        } => cmd_eer(&trials, &scores, format),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn pretty(value: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_simulate(
    config: Option<&Path>,
    out: Option<&Path>,
    emit_default_config: bool,
    format: Format,
) -> Result<()> {
    if emit_default_config {
        println!("{}", pretty(&sim::SimulateConfig::default())?);
        return Ok(());
    }
    let out = out.expect("clap enforces --out unless --emit-default-config");
    let config: sim::SimulateConfig = match config {
        Some(path) => serde_json::from_str(&read_to_string(path)?)?,
        None => sim::SimulateConfig::default(),
    };

    // Compute everything before touching the filesystem.
    let suite = sim::run_suite(&config)?;
    let report_json = format!("{}\n", pretty(&suite)?);
    let report_md = sim::render_markdown(&suite);

    // Embedding CSVs are regenerated from the same seeds; generation and
    // anonymization are deterministic, so these match what the suite scored.
    let mut csvs: Vec<(PathBuf, String)> = Vec::new();
    for &s in &config.seeds {
        let pop_cfg = sim::PopulationConfig {
            seed: config.population.seed.wrapping_add(s),
            ..config.population.clone()
        };
        let cohort_cfg = sim::PopulationConfig {
            seed: config.cohort.seed.wrapping_add(s),
            ..config.cohort.clone()
        };
        let pop = sim::generate_population(&pop_cfg)?;
        let cohort = sim::generate_population(&cohort_cfg)?;
        csvs.push((
            PathBuf::from(format!("embeddings/org-seed{s}.csv")),
            pop.to_csv_string()?,
        ));
        for mapping in &config.mappings {
            let anon = pinhole_core::mapping::anonymize(&pop, &cohort, mapping)?;
            csvs.push((
                PathBuf::from(format!(
                    "embeddings/anon-{}-{}-seed{s}.csv",
                    mapping.strategy.label(),
                    mapping.mode.label()
                )),
                anon.to_csv_string()?,
            ));
        }
    }

    let embeddings_dir = out.join("embeddings");
    std::fs::create_dir_all(&embeddings_dir).map_err(|e| Error::Io {
        path: embeddings_dir.clone(),
        source: e,
    })?;
    write_atomic(&out.join("report.json"), report_json.as_bytes())?;
    write_atomic(&out.join("report.md"), report_md.as_bytes())?;
    for (rel, text) in &csvs {
        write_atomic(&out.join(rel), text.as_bytes())?;
    }

    match format {
        Format::Json => {
            #[derive(serde::Serialize)]
            struct Summary<'a> {
                report: String,
                trends: &'a [sim::SuiteTrend],
            }
            println!(
                "{}",
                pretty(&Summary {
                    report: out.join("report.json").display().to_string(),
                    trends: &suite.trends,
                })?
            );
        }
        Format::Markdown => {
            let verdicts_start = report_md
                .find("## Trend verdicts")
                .unwrap_or(0);
            print!("{}", &report_md[verdicts_start..]);
        }
    }
    Ok(())
}

fn cmd_anonymize(embeddings: &Path, cohort: &Path, config: &Path, out: &Path) -> Result<()> {
    let set = load_embeddings(embeddings)?;
    let cohort_set = load_embeddings(cohort)?;
    let mapping: MappingConfig = serde_json::from_str(&read_to_string(config)?)?;

    let outcome = anonymize_traced(&set, &cohort_set, &mapping)?;

    #[derive(serde::Serialize)]
    struct PseudoHash {
        utt_id: String,
        sha256: String,
    }
    #[derive(serde::Serialize)]
    struct Sidecar<'a> {
        config: &'a MappingConfig,
        dim: usize,
        n_records: usize,
        pseudo_hashes: Vec<PseudoHash>,
    }
    let pseudo_hashes = outcome
        .pseudos
        .iter()
        .map(|p| {
            let mut bytes = Vec::with_capacity(p.vector.len() * 8);
            for c in &p.vector {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
            PseudoHash {
                utt_id: p.utt_id.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            }
        })
        .collect();
    let sidecar = Sidecar {
        config: &mapping,
        dim: outcome.anonymized.dim(),
        n_records: outcome.anonymized.len(),
        pseudo_hashes,
    };

    let csv = outcome.anonymized.to_csv_string()?;
    let sidecar_path = sidecar_path_for(out);
    let sidecar_json = format!("{}\n", pretty(&sidecar)?);
    write_atomic(out, csv.as_bytes())?;
    write_atomic(&sidecar_path, sidecar_json.as_bytes())?;

    println!(
        "{}",
        pretty(&serde_json::json!({
            "out": out.display().to_string(),
            "sidecar": sidecar_path.display().to_string(),
            "n_records": outcome.anonymized.len(),
        }))?
    );
    Ok(())
}

fn sidecar_path_for(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

fn cmd_dispersion(embeddings: &Path, ridge: f64, format: Format) -> Result<()> {
    let set = load_embeddings(embeddings)?;
    let report = dispersion::dispersion_of(&set, ridge)?;
    match format {
        Format::Json => println!("{}", pretty(&report)?),
        Format::Markdown => {
            println!("| metric | value |");
            println!("|---|---|");
            println!("| Tr(WᵀS_wW) | {:.6} |", report.tr_w);
            println!("| Tr(WᵀS_bW) | {:.6} |", report.tr_b);
            println!("| J (trace ratio) | {:.6} |", report.j_trace_ratio);
            println!("| J (eigen sum) | {:.6} |", report.j_lda);
            println!("| utterances | {} |", report.n);
            println!("| speakers | {} |", report.s);
        }
    }
    Ok(())
}

fn print_eer(result: &asv::EerResult, format: Format) -> Result<()> {
    match format {
        Format::Json => println!("{}", pretty(result)?),
        Format::Markdown => {
            println!("| metric | value |");
            println!("|---|---|");
            println!("| EER (%) | {:.2} |", result.eer * 100.0);
            println!("| threshold | {:.6} |", result.threshold);
            println!("| target trials | {} |", result.n_target);
            println!("| nontarget trials | {} |", result.n_nontarget);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    enroll_path: &Path,
    test_path: &Path,
    mode: EvalMode,
    seed: u64,
    trials_out: Option<&Path>,
    scores_out: Option<&Path>,
    per_partition: bool,
    format: Format,
) -> Result<()> {
    let enroll = load_embeddings(enroll_path)?;
    let test = load_embeddings(test_path)?;
    if mode == EvalMode::Deid {
        asv::check_same_utterances(&enroll, &test)?;
    }

    if per_partition {
        if trials_out.is_some() || scores_out.is_some() {
            return Err(Error::InvalidConfig {
                field: "per_partition".to_string(),
                reason: "cannot be combined with --trials-out/--scores-out".to_string(),
            });
        }
        let mut parts = Vec::new();
        for label in test.partition_labels() {
            let e = enroll.filter_partition(label);
            let t = test.filter_partition(label);
            if e.is_empty() || t.is_empty() {
                continue;
            }
            parts.push((label.to_string(), asv::evaluate_pair(&e, &t, seed)?));
        }
        let summary = asv::summarize_partitions(parts)?;
        match format {
            Format::Json => println!("{}", pretty(&summary)?),
            Format::Markdown => {
                println!("| partition | EER (%) | targets | nontargets |");
                println!("|---|---|---|---|");
                for p in &summary.partitions {
                    println!(
                        "| {} | {:.2} | {} | {} |",
                        p.partition,
                        p.result.eer * 100.0,
                        p.result.n_target,
                        p.result.n_nontarget
                    );
                }
                println!(
                    "| avg (unweighted) | {:.2} | | |",
                    summary.unweighted_avg_eer * 100.0
                );
                println!(
                    "| avg (trial-weighted) | {:.2} | | |",
                    summary.trial_weighted_avg_eer * 100.0
                );
            }
        }
        return Ok(());
    }

    let trials = asv::generate_trials(&enroll, &test, None, seed)?;
    let scores = asv::score_trials(&enroll, &test, &trials)?;
    if let Some(path) = trials_out {
        write_atomic(path, asv::trials_to_string(&trials).as_bytes())?;
    }
    if let Some(path) = scores_out {
        write_atomic(path, asv::scores_to_string(&scores).as_bytes())?;
    }
    print_eer(&asv::eer(&scores)?, format)
}

fn cmd_trials(
    enroll_path: &Path,
    test_path: &Path,
    seed: u64,
    max_nontarget: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let enroll = load_embeddings(enroll_path)?;
    let test = load_embeddings(test_path)?;
    let trials = asv::generate_trials(&enroll, &test, max_nontarget, seed)?;
    emit(&asv::trials_to_string(&trials), out)
}

fn cmd_score(
    enroll_path: &Path,
    test_path: &Path,
    trials_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let enroll = load_embeddings(enroll_path)?;
    let test = load_embeddings(test_path)?;
    let trials = asv::trials_from_str(&read_to_string(trials_path)?)?;
    let scores = asv::score_trials(&enroll, &test, &trials)?;
    emit(&asv::scores_to_string(&scores), out)
}

fn cmd_eer(trials_path: &Path, scores_path: &Path, format: Format) -> Result<()> {
    let trials = asv::trials_from_str(&read_to_string(trials_path)?)?;
    let raw = asv::scores_from_str(&read_to_string(scores_path)?)?;
    let scores = asv::join_scores(&trials, &raw)?;
    print_eer(&asv::eer(&scores)?, format)
}
