use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use vowelmark::audio::{self, CohortManifest};
use vowelmark::functionals::FeatureTable;
use vowelmark::lld::LldConfig;
use vowelmark::normalize::NormMode;
use vowelmark::pipeline::{self, DevMetric, LosoSettings, SystemKind};
use vowelmark::segment::{Part, Scheme, SegmentSpec};
use vowelmark::stats::{self, BootstrapUnit, EvaluationReport, FeatureImportance};
use vowelmark::synth::{self, CohortSpec, EffectSize};

#[derive(Parser)]
#[command(name = "vowelmark", version, about = "Pre/post-treatment voice analysis from sustained vowels and read phrases")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (WAVs, manifest.csv, planted_params.csv).
    Synth(SynthArgs),
    /// Compute the feature table of a manifest.
    Extract(ExtractArgs),
    /// Nested leave-one-speaker-out evaluation of one system.
    Run(RunArgs),
    /// Late fusion (max-vote) of two or more run reports.
    Fuse(FuseArgs),
    /// Single-feature ranking with Mann-Whitney tests.
    Rank(RankArgs),
    /// Print a results table, optionally with an SP_UAR scatter plot.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Cohort description as JSON; overrides the inline flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    speakers: usize,
    #[arg(long, value_enum, default_value_t = EffectArg::Strong)]
    effect: EffectArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also render 20 pseudo-phrases per session.
    #[arg(long)]
    phrases: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EffectArg {
    Null,
    Moderate,
    Strong,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SchemeArg {
    Mismatched,
    Matched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PartArg {
    Onset,
    Centre,
    Offset,
    Whole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    Vowels,
    Phrases,
    Mpt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NormArg {
    Standard,
    Speaker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum UnitArg {
    Session,
    Speaker,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize, PartialEq)]
struct SegmentArgs {
    #[arg(long, value_enum, default_value_t = SchemeArg::Mismatched)]
    scheme: SchemeArg,
    /// Matched window in seconds (1, 2 or 3); requires --scheme matched.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    window: Option<u8>,
    #[arg(long, value_enum, default_value_t = PartArg::Whole)]
    part: PartArg,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize, PartialEq)]
struct InputArgs {
    /// Manifest CSV (features are extracted on the fly).
    #[arg(long, conflicts_with = "features")]
    manifest: Option<PathBuf>,
    /// Precomputed feature table from `extract`.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    segment: SegmentArgs,
    /// Also write each instance's frame-level descriptors here.
    #[arg(long)]
    dump_lld: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize, PartialEq)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    segment: SegmentArgs,
    #[arg(long, value_enum, default_value_t = KindArg::Vowels)]
    kind: KindArg,
    #[arg(long, value_enum, default_value_t = NormArg::Speaker)]
    norm: NormArg,
    /// Grid-search criterion on the dev speakers.
    #[arg(long, value_enum, default_value_t = DevArg::Session)]
    dev_metric: DevArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DevArg {
    Session,
    Instance,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Bootstrap replicates for the 95% CI.
    #[arg(long, default_value_t = stats::DEFAULT_BOOTSTRAP)]
    n_boot: usize,
    #[arg(long, value_enum, default_value_t = UnitArg::Session)]
    bootstrap_unit: UnitArg,
    /// Attach the top-K single-feature ranking (0 = none).
    #[arg(long, default_value_t = 0)]
    rank: usize,
    /// System name in the report (default: derived from the flags).
    #[arg(long)]
    name: Option<String>,
    /// Re-run the configuration embedded in an earlier report.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    dump_lld: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Run reports to fuse.
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// Bootstrap seed (default: the first report's).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = stats::DEFAULT_BOOTSTRAP)]
    n_boot: usize,
    #[arg(long, value_enum, default_value_t = UnitArg::Session)]
    bootstrap_unit: UnitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// SVG scatter of SP_UAR: first report on x, second on y.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// The flags of a `run`, embedded verbatim in its report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct RunConfig {
    command: String,
    #[serde(flatten)]
    eval: EvalArgs,
    n_boot: usize,
    bootstrap_unit: UnitArg,
    rank: usize,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RankReport {
    schema_version: u32,
    tool_version: String,
    config: serde_json::Value,
    feature_ranking: Vec<FeatureImportance>,
}

/// Bad flag combinations: reported like clap's own usage errors.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl SegmentArgs {
    fn spec(&self) -> anyhow::Result<SegmentSpec> {
        let scheme = match (self.scheme, self.window) {
            (SchemeArg::Mismatched, None) => Scheme::Mismatched,
            (SchemeArg::Mismatched, Some(_)) => return Err(usage("--window requires --scheme matched")),
            (SchemeArg::Matched, Some(w)) => Scheme::Matched(w),
            (SchemeArg::Matched, None) => return Err(usage("--scheme matched requires --window 1|2|3")),
        };
        let part = match self.part {
            PartArg::Onset => Part::Onset,
            PartArg::Centre => Part::Centre,
            PartArg::Offset => Part::Offset,
            PartArg::Whole => Part::Whole,
        };
        SegmentSpec::new(part, scheme).map_err(|e| usage(e.to_string()))
    }
}

impl EvalArgs {
    fn settings(&self) -> LosoSettings {
        LosoSettings {
            norm: match self.norm {
                NormArg::Standard => NormMode::Standard,
                NormArg::Speaker => NormMode::Speaker,
            },
            dev_metric: match self.dev_metric {
                DevArg::Session => DevMetric::Session,
                DevArg::Instance => DevMetric::Instance,
            },
        }
    }

    fn kind(&self) -> SystemKind {
        match self.kind {
            KindArg::Vowels => SystemKind::Vowels,
            KindArg::Phrases => SystemKind::Phrases,
            KindArg::Mpt => SystemKind::Mpt,
        }
    }

    fn validate(&self) -> anyhow::Result<SegmentSpec> {
        let spec = self.segment.spec()?;
        if self.input.manifest.is_none() && self.input.features.is_none() {
            return Err(usage("one of --manifest or --features is required"));
        }
        Ok(spec)
    }

    fn default_name(&self) -> String {
        let mut name = format!("{:?}", self.kind).to_lowercase();
        if self.kind != KindArg::Phrases {
            match (self.segment.scheme, self.segment.window) {
                (SchemeArg::Matched, Some(w)) => name.push_str(&format!("/matched{w}")),
                _ => name.push_str("/mismatched"),
            }
            name.push_str(&format!("/{:?}", self.segment.part).to_lowercase());
        }
        name.push_str(&format!("/{:?}", self.norm).to_lowercase());
        name
    }

    /// Feature table of the selected system.
    fn table(&self, spec: SegmentSpec, dump_lld: Option<&Path>) -> anyhow::Result<FeatureTable> {
        let full = match (&self.input.manifest, &self.input.features) {
            (Some(m), _) => extract(m, spec, dump_lld)?,
            (None, Some(f)) => {
                if dump_lld.is_some() {
                    return Err(usage("--dump-lld needs --manifest"));
                }
                FeatureTable::read_csv(f).with_context(|| format!("reading {}", f.display()))?
            }
            (None, None) => unreachable!("validated"),
        };
        Ok(pipeline::system_table(&full, self.kind())?)
    }
}

fn extract(manifest: &Path, spec: SegmentSpec, dump_lld: Option<&Path>) -> anyhow::Result<FeatureTable> {
    let manifest: CohortManifest =
        audio::parse_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let Some(dir) = dump_lld else {
        return Ok(pipeline::extract_features(&manifest, spec, &LldConfig::default())?);
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let cfg = LldConfig::default();
    let rows = manifest
        .instances()
        .par_iter()
        .map(|inst| -> anyhow::Result<_> {
            let (row, contours) = pipeline::extract_instance(inst, spec, &cfg)
                .with_context(|| format!("extracting {}", inst.path.display()))?;
            let name = format!("{}_{}_{}.lld.csv", inst.speaker_id, inst.session, inst.kind);
            let path = dir.join(name);
            let tmp = temp_path(&path);
            contours.write_csv(&tmp)?;
            std::fs::rename(&tmp, &path)?;
            Ok(row)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(FeatureTable::new(rows))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes via a sibling temp file and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = temp_path(path);
    let mut f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_report(path: &Path) -> anyhow::Result<EvaluationReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: EvaluationReport =
        serde_json::from_str(&text).with_context(|| format!("{} is not a report", path.display()))?;
    if report.schema_version != stats::REPORT_SCHEMA_VERSION {
        bail!(
            "{}: report schema {} (this build reads {})",
            path.display(),
            report.schema_version,
            stats::REPORT_SCHEMA_VERSION
        );
    }
    Ok(report)
}

fn unit(u: UnitArg) -> BootstrapUnit {
    match u {
        UnitArg::Session => BootstrapUnit::Session,
        UnitArg::Speaker => BootstrapUnit::Speaker,
    }
}

fn synth_cmd(a: SynthArgs) -> anyhow::Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<CohortSpec>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => {
            let effect = match a.effect {
                EffectArg::Null => EffectSize::Null,
                EffectArg::Moderate => EffectSize::Moderate,
                EffectArg::Strong => EffectSize::Strong,
            };
            CohortSpec {
                phrases: a.phrases,
                ..CohortSpec::new(a.speakers, effect, a.seed)
            }
        }
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let cohort = synth::generate_cohort(&spec, &a.out)?;
    eprintln!(
        "wrote {} instances of {} speakers to {}",
        cohort.manifest.len(),
        spec.n_speakers,
        cohort.manifest_path.display()
    );
    Ok(())
}

fn extract_cmd(a: ExtractArgs) -> anyhow::Result<()> {
    let spec = a.segment.spec()?;
    let table = extract(&a.manifest, spec, a.dump_lld.as_deref())?;
    let tmp = temp_path(&a.out);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    table.write_csv(&tmp)?;
    std::fs::rename(&tmp, &a.out)?;
    eprintln!("wrote {} rows × {} features to {}", table.rows.len(), table.columns.len(), a.out.display());
    Ok(())
}

fn run_cmd(a: RunArgs) -> anyhow::Result<()> {
    let config = match &a.replay {
        Some(p) => {
            let report = read_report(p)?;
            serde_json::from_value::<RunConfig>(report.config)
                .map_err(|e| usage(format!("{}: not a run report: {e}", p.display())))?
        }
        None => RunConfig {
            command: "run".into(),
            name: a.name.clone().unwrap_or_else(|| a.eval.default_name()),
            eval: a.eval.clone(),
            n_boot: a.n_boot,
            bootstrap_unit: a.bootstrap_unit,
            rank: a.rank,
        },
    };
    let spec = config.eval.validate()?;
    let table = config.eval.table(spec, a.dump_lld.as_deref())?;
    let settings = config.eval.settings();
    let output = pipeline::run_loso(&table, &settings, &config.name, None)?;
    let mut report = EvaluationReport::new(
        &output,
        config.eval.seed,
        config.n_boot,
        unit(config.bootstrap_unit),
        serde_json::to_value(&config)?,
    )?;
    if config.rank > 0 {
        report.feature_ranking = stats::rank_features(&table, &settings, config.rank)?;
    }
    write_json(&a.out, &report)?;
    print!("{}", stats::render_table(std::slice::from_ref(&report)));
    Ok(())
}

fn fuse_cmd(a: FuseArgs) -> anyhow::Result<()> {
    let reports = a.reports.iter().map(|p| read_report(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let outputs: Vec<_> = reports.iter().map(EvaluationReport::output).collect();
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| reports.iter().map(|r| r.system.as_str()).collect::<Vec<_>>().join(" + "));
    let fused = pipeline::late_fuse(&outputs, &name)?;
    let seed = a.seed.unwrap_or(reports[0].seed);
    let config = serde_json::json!({
        "command": "fuse",
        "reports": a.reports,
        "name": name,
        "seed": seed,
        "n_boot": a.n_boot,
        "bootstrap_unit": a.bootstrap_unit,
    });
    let report = EvaluationReport::new(&fused, seed, a.n_boot, unit(a.bootstrap_unit), config)?;
    write_json(&a.out, &report)?;
    let mut all = reports;
    all.push(report);
    print!("{}", stats::render_table(&all));
    Ok(())
}

fn rank_cmd(a: RankArgs) -> anyhow::Result<()> {
    let spec = a.eval.validate()?;
    let table = a.eval.table(spec, None)?;
    let ranking = stats::rank_features(&table, &a.eval.settings(), a.top_k)?;
    let mut config = serde_json::to_value(&a.eval)?;
    config["command"] = "rank".into();
    config["top_k"] = a.top_k.into();
    let report = RankReport {
        schema_version: stats::REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        feature_ranking: ranking,
    };
    write_json(&a.out, &report)?;
    for f in &report.feature_ranking {
        println!(
            "{:<32} SE_UAR {:>5.1}  p={:.3}  {:?}",
            f.feature,
            100.0 * f.single_feature_uar,
            f.p_value_two_sided,
            f.direction
        );
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> anyhow::Result<()> {
    let reports = a.reports.iter().map(|p| read_report(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let table = stats::render_table(&reports);
    print!("{table}");
    if let Some(out) = &a.out {
        write_atomic(out, table.as_bytes())?;
    }
    if let Some(plot) = &a.plot {
        if reports.len() != 2 {
            return Err(usage("--plot needs exactly two reports (x axis first)"));
        }
        write_atomic(plot, stats::sp_uar_scatter_svg(&reports[0], &reports[1]).as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Extract(a) => extract_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Rank(a) => rank_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
