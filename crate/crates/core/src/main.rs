use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use yingram::autodiff::{finite_diff_check, random_voiced_frame, GradReport};
use yingram::config::AnalysisConfig;
use yingram::eval::{batch_report, evaluate_shift_pair, extract_pitch_contour, load_for_analysis, load_manifest, ContourParams, ShiftReport};
use yingram::grid::{compute_yingram, YingramSidecar};
use yingram::Error;

#[derive(Parser)]
#[command(name = "yingram", version, about = "Yingram pitch analysis and pitch-shift evaluation")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Settings that override the config file.
#[derive(Args)]
struct Overrides {
    /// JSON or key=value file with analysis settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    sample_rate: Option<u32>,
    /// YIN integration window in samples
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    hop: Option<usize>,
    #[arg(long, global = true)]
    lambda_yin: Option<f64>,
    /// First-dip threshold on the CMND curve
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    voicing_cutoff: Option<f64>,
    #[arg(long, global = true)]
    fmin: Option<f64>,
    #[arg(long, global = true)]
    fmax: Option<f64>,
    /// Accepted semitone error of a shift verdict
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true)]
    min_overlap: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the Yingram of a WAV file
    Analyze {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Output format; inferred from the extension (.csv) when omitted
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Write the per-frame f0 contour as CSV
    F0 {
        input: PathBuf,
        /// Defaults to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a pitch-shifted rendition against the normal one
    CompareShift {
        normal: PathBuf,
        shifted: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        scope_shift: i32,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 0 even if the verdict fails
        #[arg(long)]
        no_verdict_exit: bool,
    },
    /// Check analytic Yingram gradients against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 25)]
        probes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every pair of a JSON manifest
    Batch {
        manifest: PathBuf,
        #[arg(long)]
        out_json: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    /// Little-endian f32 matrix plus a JSON sidecar
    Raw,
}

impl Overrides {
    fn resolve(&self) -> yingram::Result<AnalysisConfig> {
        let mut cfg = match &self.config {
            Some(path) => AnalysisConfig::load(path)?,
            None => AnalysisConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(
            sample_rate => sample_rate, window => window, hop => hop, lambda_yin => lambda_yin,
            threshold => threshold, voicing_cutoff => voicing_cutoff, fmin => f_min, fmax => f_max,
            tolerance => shift_tolerance, min_overlap => min_overlap, seed => seed
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Outcome {
    Success,
    Failed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = cli.overrides.resolve().and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Writes through a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> yingram::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e| Error::Io { path: path.to_path_buf(), source: e };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf).map_err(io)?;
        buf.flush().map_err(io)?;
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644)).map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> yingram::Result<()> {
    match out {
        Some(path) => write_atomic(path, write),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(|e| Error::Io { path: "<stdout>".into(), source: e })
        }
    }
}

fn json_writer<T: Serialize>(value: &T) -> impl FnOnce(&mut dyn Write) -> std::io::Result<()> + '_ {
    move |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    }
}

#[derive(Serialize)]
struct SidecarDoc<'a> {
    #[serde(flatten)]
    sidecar: YingramSidecar,
    format: &'static str,
    config: &'a AnalysisConfig,
}

#[derive(Serialize)]
struct ShiftDoc<'a> {
    config: &'a AnalysisConfig,
    normal: &'a Path,
    shifted: &'a Path,
    report: ShiftReport,
}

#[derive(Serialize)]
struct GradcheckDoc<'a> {
    config: &'a AnalysisConfig,
    frames: usize,
    eps: f64,
    probes: usize,
    max_rel_error: f64,
    pass: bool,
    reports: Vec<GradReport>,
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn run(command: Command, cfg: &AnalysisConfig) -> yingram::Result<Outcome> {
    match command {
        Command::Analyze { input, out, format } => {
            let w = load_for_analysis(&input, cfg)?;
            let y = compute_yingram(&w, &cfg.yingram())?;
            let format = format.unwrap_or_else(|| {
                if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                    Format::Csv
                } else {
                    Format::Raw
                }
            });
            let (label, result) = match format {
                Format::Csv => ("csv", write_atomic(&out, |w| y.write_csv(w))),
                Format::Raw => ("raw_f32_le", write_atomic(&out, |w| y.write_raw_f32(w))),
            };
            result?;
            let doc = SidecarDoc { sidecar: y.sidecar(), format: label, config: cfg };
            write_atomic(&sidecar_path(&out), json_writer(&doc))?;
            Ok(Outcome::Success)
        }
        Command::F0 { input, out } => {
            let w = load_for_analysis(&input, cfg)?;
            let contour = extract_pitch_contour(&w, &ContourParams::from(cfg))?;
            emit(out.as_deref(), |w| {
                writeln!(w, "frame,time_sec,f0_hz,aperiodicity")?;
                for (k, p) in contour.points.iter().enumerate() {
                    let f0 = p.f0.map(|f| f.to_string()).unwrap_or_default();
                    writeln!(w, "{k},{},{f0},{}", p.time, p.aperiodicity)?;
                }
                Ok(())
            })?;
            Ok(Outcome::Success)
        }
        Command::CompareShift { normal, shifted, scope_shift, out, no_verdict_exit } => {
            let a = load_for_analysis(&normal, cfg)?;
            let b = load_for_analysis(&shifted, cfg)?;
            let report = evaluate_shift_pair(&a, &b, scope_shift, cfg)?;
            let pass = report.pass;
            let doc = ShiftDoc { config: cfg, normal: &normal, shifted: &shifted, report };
            emit(out.as_deref(), json_writer(&doc))?;
            Ok(if pass || no_verdict_exit { Outcome::Success } else { Outcome::Failed })
        }
        Command::Gradcheck { frames, eps, probes, out } => {
            if frames == 0 {
                log::warn!("no frames requested; gradcheck passes vacuously");
            }
            let params = cfg.yingram();
            let len = params.frame_len(cfg.sample_rate);
            let check = cfg.gradcheck(eps, probes);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let reports = (0..frames)
                .map(|k| {
                    let frame = random_voiced_frame::<f64, _>(&mut rng, len, cfg.sample_rate);
                    finite_diff_check(&frame, &params, &yingram::autodiff::GradcheckParams { seed: cfg.seed.wrapping_add(k as u64), ..check })
                })
                .collect::<yingram::Result<Vec<_>>>()?;
            let pass = reports.iter().all(|r| r.pass);
            let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            let doc = GradcheckDoc { config: cfg, frames, eps, probes, max_rel_error, pass, reports };
            emit(out.as_deref(), json_writer(&doc))?;
            Ok(if pass { Outcome::Success } else { Outcome::Failed })
        }
        Command::Batch { manifest, out_json, out_csv } => {
            let entries = load_manifest(&manifest)?;
            let report = batch_report(&entries, cfg);
            for e in report.entries.iter().filter(|e| e.error.is_some()) {
                log::warn!("{} / {}: {}", e.normal.display(), e.shifted.display(), e.error.as_deref().unwrap_or(""));
            }
            write_atomic(&out_json, json_writer(&report))?;
            write_atomic(&out_csv, |w| report.write_csv(w))?;
            Ok(if report.all_passed() { Outcome::Success } else { Outcome::Failed })
        }
    }
}
