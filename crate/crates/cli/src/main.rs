//! gadgetscope: scan executable bytes for code-reuse gadgets, compare
//! baseline/variant gadget sets, and run layout mitigation passes over
//! program listings.
//!
//! Exit codes: 0 success; 1 undesirable deltas under `--fail-on-undesirable`;
//! 2 load/parse/assemble errors; 3 unknown pass name.

use clap::{Args, Parser, Subcommand};
use gadgetscope_core::diff::{compare, render_report, OutputFormat};
use gadgetscope_core::layout::{assemble, parse_listing, render_listing};
use gadgetscope_core::metrics::{
    expressivity, set_quality, special_purpose, ClassRuleTable, ScoreTable,
};
use gadgetscope_core::passes::{parse_pass_list, run_pipeline, PassLimits};
use gadgetscope_core::region::{load_elf_exec_regions, load_raw_region, Region};
use gadgetscope_core::scan::{filter_useful, harvest_gadgets, GadgetSet, ScanConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gadgetscope", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputOpts {
    /// Treat the input as raw code bytes instead of an ELF binary.
    #[arg(long)]
    raw: bool,
    /// Base address for raw input (hex, e.g. 0x401000).
    #[arg(long, value_parser = parse_hex, default_value = "0")]
    base: u64,
    /// Maximum gadget body length in bytes.
    #[arg(long = "max-bytes", default_value_t = 10)]
    max_bytes: usize,
}

#[derive(Args)]
struct MetricOpts {
    /// Expressivity class table file (default: built-in;
    /// GADGETSCOPE_CLASS_TABLE overrides).
    #[arg(long)]
    class_table: Option<PathBuf>,
    /// Quality score table file (default: built-in;
    /// GADGETSCOPE_SCORE_TABLE overrides).
    #[arg(long)]
    score_table: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Catalog the useful gadgets of a binary and print set metrics.
    Scan {
        path: PathBuf,
        #[command(flatten)]
        input: InputOpts,
        #[arg(long, default_value = "text")]
        format: String,
        #[command(flatten)]
        metrics: MetricOpts,
    },
    /// Compare a variant's gadget set against a baseline.
    Compare {
        baseline: PathBuf,
        variant: PathBuf,
        #[command(flatten)]
        input: InputOpts,
        #[arg(long, default_value = "text")]
        format: String,
        #[command(flatten)]
        metrics: MetricOpts,
        /// Exit 1 when any undesirable delta is flagged.
        #[arg(long)]
        fail_on_undesirable: bool,
    },
    /// Apply mitigation passes to a listing and re-scan the result.
    Transform {
        listing: PathBuf,
        /// Comma-separated passes: merge-ret,merge-ijmp,widen,sled,reorder.
        #[arg(long, default_value = "")]
        passes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the transformed listing.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-pass statistics file (JSON).
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        max_iterations: u64,
        #[arg(long, default_value_t = 5)]
        max_failures: u64,
    },
}

fn parse_hex(s: &str) -> Result<u64, String> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u64::from_str_radix(digits, 16).map_err(|e| format!("bad hex address {s:?}: {e}"))
}

/// One-line diagnostic plus the documented exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn load(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::load(format!("{}: {e}", path.display())))
}

fn load_useful_set(path: &Path, input: &InputOpts) -> Result<GadgetSet, Failure> {
    let bytes = read_file(path)?;
    let regions: Vec<Region> = if input.raw {
        vec![load_raw_region(&bytes, input.base)
            .map_err(|e| Failure::load(format!("{}: {e}", path.display())))?]
    } else {
        load_elf_exec_regions(&bytes)
            .map_err(|e| Failure::load(format!("{}: {e}", path.display())))?
    };
    let cfg = ScanConfig { max_prefix_bytes: input.max_bytes, include_multi_branch: true };
    let mut set = GadgetSet::new(vec![path.display().to_string()]);
    for region in &regions {
        set.merge(filter_useful(&harvest_gadgets(region, &cfg)));
    }
    Ok(set)
}

fn table_source(flag: &Option<PathBuf>, env: &str) -> Option<PathBuf> {
    flag.clone().or_else(|| std::env::var_os(env).map(PathBuf::from))
}

fn load_class_table(opts: &MetricOpts) -> Result<ClassRuleTable, Failure> {
    match table_source(&opts.class_table, "GADGETSCOPE_CLASS_TABLE") {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::load(format!("{}: {e}", path.display())))?;
            ClassRuleTable::parse(&text)
                .map_err(|e| Failure::load(format!("{}: {e}", path.display())))
        }
        None => Ok(ClassRuleTable::default_table()),
    }
}

fn load_score_table(opts: &MetricOpts) -> Result<ScoreTable, Failure> {
    match table_source(&opts.score_table, "GADGETSCOPE_SCORE_TABLE") {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::load(format!("{}: {e}", path.display())))?;
            ScoreTable::parse(&text).map_err(|e| Failure::load(format!("{}: {e}", path.display())))
        }
        None => Ok(ScoreTable::default()),
    }
}

fn parse_format(s: &str) -> Result<OutputFormat, Failure> {
    s.parse::<OutputFormat>().map_err(|e| Failure::load(e.to_string()))
}

#[derive(Serialize)]
struct ScanReport {
    schema_version: u32,
    useful_gadgets: usize,
    average_quality: f64,
    expressivity: [usize; 3],
    special_purpose: gadgetscope_core::metrics::SpAvailability,
    gadgets: Vec<ScanGadget>,
}

#[derive(Serialize)]
struct ScanGadget {
    address: String,
    gadget: String,
}

fn cmd_scan(path: &Path, input: &InputOpts, format: &str, metrics: &MetricOpts) -> Result<(), Failure> {
    let format = parse_format(format)?;
    let rules = load_class_table(metrics)?;
    let table = load_score_table(metrics)?;
    let set = load_useful_set(path, input)?;

    let quality = set_quality(&set, &table);
    let profile = expressivity(&set, &rules).map_err(|e| Failure::load(e.to_string()))?;
    let special = special_purpose(&set);

    match format {
        OutputFormat::Text => {
            println!("useful gadgets: {}", quality.useful_count);
            println!("average quality: {:.1}", quality.average_score);
            println!(
                "expressivity: {}/{}/{} (of {}/{}/{})",
                profile.satisfied[0], profile.satisfied[1], profile.satisfied[2],
                profile.required[0], profile.required[1], profile.required[2]
            );
            let kinds: Vec<&str> = special.present.iter().map(|k| k.name()).collect();
            println!(
                "special purpose: {}/10{}{}",
                special.count(),
                if kinds.is_empty() { "" } else { ": " },
                kinds.join(",")
            );
            for g in set.iter() {
                println!("0x{:x}: {}", g.address, g.normalized_key);
            }
        }
        OutputFormat::Json => {
            let report = ScanReport {
                schema_version: 1,
                useful_gadgets: quality.useful_count,
                average_quality: quality.average_score,
                expressivity: profile.satisfied,
                special_purpose: special,
                gadgets: set
                    .iter()
                    .map(|g| ScanGadget {
                        address: format!("0x{:x}", g.address),
                        gadget: g.normalized_key.clone(),
                    })
                    .collect(),
            };
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
    }
    Ok(())
}

fn cmd_compare(
    baseline: &Path,
    variant: &Path,
    input: &InputOpts,
    format: &str,
    metrics: &MetricOpts,
    fail_on_undesirable: bool,
) -> Result<bool, Failure> {
    let format = parse_format(format)?;
    let rules = load_class_table(metrics)?;
    let table = load_score_table(metrics)?;
    let baseline_set = load_useful_set(baseline, input)?;
    let variant_set = load_useful_set(variant, input)?;
    let report = compare(&baseline_set, &variant_set, &rules, &table)
        .map_err(|e| Failure::load(e.to_string()))?;
    print!("{}", render_report(&report, format));
    if format == OutputFormat::Json {
        println!();
    }
    Ok(fail_on_undesirable && report.any_undesirable())
}

fn useful_count(region: &Region) -> usize {
    filter_useful(&harvest_gadgets(region, &ScanConfig::default())).len()
}

#[allow(clippy::too_many_arguments)]
fn cmd_transform(
    listing: &Path,
    passes: &str,
    seed: u64,
    out: &Path,
    stats_path: Option<&Path>,
    max_iterations: u64,
    max_failures: u64,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(listing)
        .map_err(|e| Failure::load(format!("{}: {e}", listing.display())))?;
    let program = parse_listing(&text)
        .map_err(|e| Failure::load(format!("{}: {e}", listing.display())))?;
    let passes = parse_pass_list(passes)
        .map_err(|e| Failure { code: 3, message: e.to_string() })?;
    let limits = PassLimits {
        max_iterations,
        max_consecutive_failures: max_failures,
        seed,
    };

    let before = assemble(&program).map_err(|e| Failure::load(e.to_string()))?;
    let (transformed, stats) =
        run_pipeline(&program, &passes, &limits).map_err(|e| Failure::load(e.to_string()))?;
    let after = assemble(&transformed).map_err(|e| Failure::load(e.to_string()))?;

    std::fs::write(out, render_listing(&transformed))
        .map_err(|e| Failure::load(format!("{}: {e}", out.display())))?;
    if let Some(path) = stats_path {
        let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
        std::fs::write(path, json)
            .map_err(|e| Failure::load(format!("{}: {e}", path.display())))?;
    }

    println!("before: {} useful gadgets", useful_count(&before));
    println!("after: {} useful gadgets", useful_count(&after));
    for s in &stats {
        println!(
            "pass {}: {} edits, sites {} -> {}, {} iterations",
            s.pass, s.edits, s.sites_before, s.sites_after, s.iterations
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match &cli.command {
        Command::Scan { path, input, format, metrics } => {
            cmd_scan(path, input, format, metrics)?;
            Ok(false)
        }
        Command::Compare { baseline, variant, input, format, metrics, fail_on_undesirable } => {
            cmd_compare(baseline, variant, input, format, metrics, *fail_on_undesirable)
        }
        Command::Transform { listing, passes, seed, out, stats, max_iterations, max_failures } => {
            cmd_transform(
                listing,
                passes,
                *seed,
                out,
                stats.as_deref(),
                *max_iterations,
                *max_failures,
            )?;
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(failure) => {
            eprintln!("gadgetscope: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
