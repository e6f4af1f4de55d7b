use clap::{Args, Parser, Subcommand, ValueEnum};
use qdcascade::correlator::{coincidences, g2_zero, CorrelationHistogram, G2Method};
use qdcascade::emission::tagfile;
use qdcascade::experiments::{self, Artifact, Format, Headline, RunOutput};
use qdcascade::lifetimes::{fit_lifetime, FitOptions, FitWindow, Kernel, ModelKind};
use qdcascade::scenario::{Experiment, Scenario};
use qdcascade::{Error, IrfKernel};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "qdcascade", version, about = "Biexciton cascade simulation and photon-correlation analysis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the scenario file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Exit with status 4 when a headline misses its acceptance target.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in --config.
    Run,
    /// Run one experiment, from --config if given, else from defaults.
    Simulate {
        #[arg(value_enum)]
        experiment: ExperimentArg,
    },
    #[command(subcommand)]
    Analyze(Analyze),
    /// Coincidence histogram between two channels of a time-tag file.
    Correlate {
        /// Time tags, binary (.qtt) or CSV (.csv).
        #[arg(long)]
        tags: PathBuf,
        #[arg(long)]
        start: u8,
        #[arg(long)]
        stop: u8,
        #[arg(long, default_value_t = qdcascade::correlator::DEFAULT_BIN_WIDTH_PS)]
        bin_ps: u64,
        #[arg(long, default_value_t = qdcascade::correlator::DEFAULT_RANGE_NS)]
        range_ns: f64,
        /// Laser repetition rate, stored in the histogram header.
        #[arg(long, default_value_t = 80.0)]
        rep_rate_mhz: f64,
    },
    /// Convert a time-tag file between binary (.qtt) and CSV (.csv).
    ConvertTags { input: PathBuf, output: PathBuf },
}

#[derive(Subcommand)]
enum Analyze {
    /// Stokes parameters and fidelity from a counts table.
    Tomography {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, default_value_t = qdcascade::correlator::DEFAULT_WINDOW_NS)]
        window_ns: f64,
    },
    /// Lifetime fit of a histogram CSV.
    Lifetime {
        #[arg(long)]
        histogram: PathBuf,
        /// single_exp, double_exp_cascade or single_exp_known_decay.
        #[arg(long, default_value = "single_exp")]
        model: String,
        /// Gaussian timing jitter of the kernel (ps); 0 for a delta kernel.
        #[arg(long, default_value_t = 0.0)]
        irf_sigma_ps: f64,
        /// Feeding lifetime held fixed in the cascade model.
        #[arg(long)]
        fixed_feed_ns: Option<f64>,
        /// Known decay folded into the kernel.
        #[arg(long)]
        known_decay_ns: Option<f64>,
        /// Explicit fit window start and end (ns).
        #[arg(long, num_args = 2, value_names = ["START", "END"])]
        window: Option<Vec<f64>>,
    },
    /// g²(0) of a histogram CSV by both normalizations.
    G2 {
        #[arg(long)]
        histogram: PathBuf,
        #[arg(long, default_value_t = qdcascade::correlator::DEFAULT_SIDE_PEAKS)]
        side_peaks: usize,
        #[arg(long, default_value_t = qdcascade::correlator::DEFAULT_WINDOW_NS)]
        window_ns: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Rabi,
    Detuning,
    Tomography,
    Hbt,
    Lifetime,
    Spectrum,
    Circular,
    PolarizationScan,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Rabi => Experiment::RabiSweep,
            ExperimentArg::Detuning => Experiment::DetuningSweep,
            ExperimentArg::Tomography => Experiment::Tomography,
            ExperimentArg::Hbt => Experiment::Hbt,
            ExperimentArg::Lifetime => Experiment::Lifetime,
            ExperimentArg::Spectrum => Experiment::Spectrum,
            ExperimentArg::Circular => Experiment::CircularSuppression,
            ExperimentArg::PolarizationScan => Experiment::PolarizationScan,
        }
    }
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.root().is_config() { EXIT_CONFIG } else { EXIT_NUMERICAL },
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn execute(cli: &Cli) -> Result<u8, Failure> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error(e.to_string()))?;
    }
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let (label, out, scenario, output) = match &cli.command {
        Command::Run => {
            let s = load_scenario(g, None)?;
            let o = experiments::run(&s)?;
            (s.experiment.name().to_string(), out_dir(g, Some(&s)), Some(s), o)
        }
        Command::Simulate { experiment } => {
            let s = load_scenario(g, Some((*experiment).into()))?;
            let o = experiments::run(&s)?;
            (s.experiment.name().to_string(), out_dir(g, Some(&s)), Some(s), o)
        }
        Command::Analyze(a) => {
            let (label, o) = analyze(g, a)?;
            (label, out_dir(g, None), None, o)
        }
        Command::Correlate {
            tags,
            start,
            stop,
            bin_ps,
            range_ns,
            rep_rate_mhz,
        } => {
            let streams = read_tags(tags)?;
            let pick = |c: u8| {
                streams
                    .iter()
                    .find(|s| s.channel == c)
                    .cloned()
                    .ok_or_else(|| config_error(format!("no channel {c} in {}", tags.display())))
            };
            let (a, b) = (pick(*start)?, pick(*stop)?);
            let mut h = coincidences(&a, &b, *bin_ps, *range_ns)?;
            let last = a.tags.last().max(b.tags.last()).copied().unwrap_or(0);
            h.duration_s = last as f64 * 1e-12;
            h.rep_period_ns = 1e3 / rep_rate_mhz;
            h.seed = g.seed;
            let o = RunOutput {
                experiment: Experiment::Hbt,
                seed: g.seed.unwrap_or(0),
                artifacts: vec![Artifact::Histogram {
                    name: format!("histogram_{start}_{stop}"),
                    hist: h,
                }],
                headlines: Vec::new(),
            };
            ("correlate".to_string(), out_dir(g, None), None, o)
        }
        Command::ConvertTags { input, output } => {
            let streams = read_tags(input)?;
            let bytes = match ext(output).as_str() {
                "qtt" | "bin" => tagfile::to_binary(&streams),
                "csv" => tagfile::to_csv(&streams).into_bytes(),
                e => return Err(config_error(format!("unknown tag file extension {e:?}"))),
            };
            std::fs::write(output, bytes).map_err(|e| config_error(format!("{}: {e}", output.display())))?;
            println!("wrote {} ({} streams)", output.display(), streams.len());
            return Ok(0);
        }
    };

    let files = write_outputs(&out, &output, g.format.into(), scenario.as_ref())?;
    let summary = json!({
        "command": label,
        "seed": output.seed,
        "started_at": started.to_rfc3339(),
        "elapsed_s": clock.elapsed().as_secs_f64(),
        "format": match g.format { FormatArg::Csv => "csv", FormatArg::Json => "json" },
        "passed": output.passed(),
        "headlines": output.headlines,
        "files": files,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(out.join("summary.json"), text).map_err(io_failure(&out))?;

    println!("{label}: seed {} -> {}", output.seed, out.display());
    for h in &output.headlines {
        println!("  {}", describe(h));
    }
    if g.check && !output.passed() {
        eprintln!("acceptance check failed");
        return Ok(EXIT_CHECK);
    }
    Ok(0)
}

fn describe(h: &Headline) -> String {
    let mut s = format!("{} = {}", h.name, h.value);
    if let Some(e) = h.error {
        s += &format!(" ± {e:.3e}");
    }
    if let (Some(t), Some(p)) = (&h.target, h.pass) {
        s += &format!("  [{}: {t}]", if p { "PASS" } else { "FAIL" });
    }
    s
}

fn load_scenario(g: &Global, experiment: Option<Experiment>) -> Result<Scenario, Failure> {
    let mut s = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            Scenario::from_toml(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => {
            let e = experiment.ok_or_else(|| config_error("`run` needs --config"))?;
            let seed = g
                .seed
                .ok_or_else(|| config_error("a seed is required: pass --seed or a --config file"))?;
            Scenario::new(e, seed)
        }
    };
    if let Some(e) = experiment {
        s.experiment = e;
    }
    if let Some(seed) = g.seed {
        s.seed = seed;
    }
    s.check().map_err(|e| config_error(e.to_string()))?;
    Ok(s)
}

fn out_dir(g: &Global, s: Option<&Scenario>) -> PathBuf {
    g.out
        .clone()
        .or_else(|| s.and_then(|s| s.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("qdcascade-out"))
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure {
        code: EXIT_NUMERICAL,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_outputs(out: &Path, o: &RunOutput, format: Format, scenario: Option<&Scenario>) -> Result<Vec<String>, Failure> {
    std::fs::create_dir_all(out).map_err(io_failure(out))?;
    let mut files = Vec::new();
    if let Some(s) = scenario {
        std::fs::write(out.join("scenario.toml"), s.to_toml()).map_err(io_failure(out))?;
        files.push("scenario.toml".to_string());
    }
    for a in &o.artifacts {
        let (name, bytes) = a.render(format);
        let path = out.join(&name);
        std::fs::write(&path, bytes).map_err(io_failure(&path))?;
        files.push(name);
    }
    Ok(files)
}

fn ext(p: &Path) -> String {
    p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn read_tags(path: &Path) -> Result<Vec<qdcascade::emission::TimeTagStream>, Failure> {
    let bytes = std::fs::read(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let parsed = if ext(path) == "csv" {
        let text = String::from_utf8(bytes).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        tagfile::from_csv(&text)
    } else {
        tagfile::from_binary(&bytes)
    };
    parsed.map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn read_histogram(path: &Path) -> Result<CorrelationHistogram, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    CorrelationHistogram::from_csv(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn analyze(g: &Global, a: &Analyze) -> Result<(String, RunOutput), Failure> {
    let seed = g.seed.unwrap_or(0);
    match a {
        Analyze::Tomography { counts, window_ns } => {
            let mut s = Scenario::new(Experiment::Tomography, seed);
            s.tomography.counts_file = Some(counts.clone());
            s.tomography.window_ns = *window_ns;
            Ok(("analyze tomography".into(), experiments::run(&s)?))
        }
        Analyze::Lifetime {
            histogram,
            model,
            irf_sigma_ps,
            fixed_feed_ns,
            known_decay_ns,
            window,
        } => {
            let h = read_histogram(histogram)?;
            let kind: ModelKind = model.parse().map_err(|e: Error| config_error(e.to_string()))?;
            let w_ns = h.bin_width_ps as f64 * 1e-3;
            let mut kernel = Kernel::from_irf(&IrfKernel::Gaussian { sigma_ps: *irf_sigma_ps }, w_ns)
                .map_err(|e| config_error(e.to_string()))?;
            let mut opts = FitOptions::default();
            match (kind, fixed_feed_ns, known_decay_ns) {
                (ModelKind::DoubleExpCascade, Some(t), _) => opts = FitOptions::cascade_with_fixed_feed(*t),
                (ModelKind::SingleExpKnownDecay, _, Some(t)) => kernel = kernel.convolve(&Kernel::exponential(w_ns, *t))?,
                (ModelKind::SingleExpKnownDecay, _, None) => {
                    return Err(config_error("single_exp_known_decay needs --known-decay-ns"))
                }
                _ => {}
            }
            if let Some(w) = window {
                opts.window = FitWindow::Explicit {
                    start_ns: w[0],
                    end_ns: w[1],
                };
            }
            let fit = fit_lifetime(&h, kind, &kernel, &opts)?;
            let (tau, err) = fit.tau();
            let headlines = vec![
                Headline {
                    name: "tau_ns".into(),
                    value: tau,
                    error: Some(err),
                    target: None,
                    pass: None,
                },
                Headline {
                    name: "reduced_chi_square".into(),
                    value: fit.reduced_chi_square,
                    error: None,
                    target: None,
                    pass: None,
                },
            ];
            let o = RunOutput {
                experiment: Experiment::Lifetime,
                seed,
                artifacts: vec![Artifact::Text {
                    name: "fit.txt".into(),
                    content: fit.to_text(),
                }],
                headlines,
            };
            Ok(("analyze lifetime".into(), o))
        }
        Analyze::G2 {
            histogram,
            side_peaks,
            window_ns,
        } => {
            let h = read_histogram(histogram)?;
            let side = g2_zero(&h, h.rep_period_ns, G2Method::SidePeak, *side_peaks, *window_ns)?;
            let raw = g2_zero(&h, h.rep_period_ns, G2Method::RawCounts, *side_peaks, *window_ns)?;
            let info = |name: &str, value: f64| Headline {
                name: name.into(),
                value,
                error: None,
                target: None,
                pass: None,
            };
            let o = RunOutput {
                experiment: Experiment::Hbt,
                seed,
                artifacts: Vec::new(),
                headlines: vec![
                    info("g2_zero", side.value),
                    info("center_peak_counts", raw.value),
                    info("side_peak_mean_counts", side.peak.side_peak_mean.unwrap_or(0.0)),
                ],
            };
            Ok(("analyze g2".into(), o))
        }
    }
}
