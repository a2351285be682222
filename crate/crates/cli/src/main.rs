//! `sq2s`: batch front end for corpus generation, training, inference,
//! evaluation and spectrogram conversion.
//!
//! Exit codes: 0 success, 2 usage or input error, 1 internal failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sq2s_core::dsp::io::{read_pgm, read_wav, write_pgm, write_wav};
use sq2s_core::dsp::{melspec_to_wav, wav_to_melspec, MelConfig, MelSpec};
use sq2s_core::metrics::{AblationReport, EvalReport};
use sq2s_core::synthdata::{load_corpus, make_corpus};
use sq2s_core::trainer::{
    ablation_grid, checkpoint_of, evaluate, leave_one_out_eval, parse_grid, sweep, train, train_config_of, Ablation,
    Dataset, Scale, SweepParam, TrainConfig,
};
use sq2s_core::translator::{Checkpoint, Translator};
use sq2s_core::{Error, Tensor};

#[derive(Parser)]
#[command(name = "sq2s", version, about = "Tagged image sequence to speech spectrogram and waveform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired corpus and its manifest.
    GenData(GenData),
    /// Train translator, attention and discriminator; writes a checkpoint and a loss log.
    Train(Train),
    /// Translate one sequence to a spectrogram (PGM) and waveform (WAV).
    Synth(Synth),
    /// Score a checkpoint on corpus items (per-item CSV).
    Eval(Eval),
    /// Leave-one-subject-out training and evaluation over seeds.
    Loo(Loo),
    /// Leave-one-out for every ablation {full, no_attention, no_pairwise, no_gan}.
    Ablate(Loo),
    /// Leave-one-out at every value of a beta or lambda grid.
    Sweep(SweepCmd),
    /// WAV to normalized log-mel PGM.
    Wav2spec(Wav2Spec),
    /// PGM spectrogram to WAV via mel inversion and Griffin-Lim.
    Spec2wav(Spec2Wav),
    /// Describe a checkpoint or a model preset.
    Info(Info),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// desk, desk_small or paper.
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Write into a non-empty directory.
    #[arg(long)]
    force: bool,
}

/// Training options shared by train/loo/ablate/sweep. Flags override the
/// config file.
#[derive(Args, Clone)]
struct TrainOpts {
    /// key=value training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<Scale>,
    /// full, or flags joined by '+': no_attention, no_pairwise, no_gan.
    #[arg(long)]
    ablate: Option<Ablation>,
}

impl TrainOpts {
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.scale {
            cfg.scale = v;
        }
        if let Some(v) = self.ablate {
            cfg.ablation = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
    /// Leave this subject's items out of training.
    #[arg(long)]
    holdout: Option<usize>,
}

#[derive(Args)]
struct Synth {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    out_wav: PathBuf,
    #[arg(long)]
    out_pgm: PathBuf,
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subjects to score (default: all).
    #[arg(long, value_delimiter = ',')]
    subjects: Vec<usize>,
    /// Per-item CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Loo {
    #[command(flatten)]
    opts: TrainOpts,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Held-out subjects to run (default: every subject).
    #[arg(long, value_delimiter = ',')]
    folds: Vec<usize>,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    opts: TrainOpts,
    /// Summary CSV, one row per grid value.
    #[arg(long)]
    out: PathBuf,
    /// start:stop:step or a comma list.
    #[arg(long, conflicts_with = "lambda_grid", required_unless_present = "lambda_grid")]
    beta_grid: Option<String>,
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    folds: Vec<usize>,
}

/// Mel settings; the preset fills anything not given.
#[derive(Args)]
struct DspOpts {
    #[arg(long, default_value = "desk")]
    scale: Scale,
    #[arg(long)]
    n_fft: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    fmin: Option<f64>,
    #[arg(long)]
    fmax: Option<f64>,
}

impl DspOpts {
    fn config(&self, sample_rate: Option<u32>) -> Result<MelConfig, CliError> {
        let mut c = self.scale.mel();
        if let Some(sr) = sample_rate {
            c.sample_rate = sr;
            c.fmax = c.fmax.min(sr as f64 / 2.0);
        }
        c.n_fft = self.n_fft.unwrap_or(c.n_fft);
        c.hop = self.hop.unwrap_or(c.hop);
        c.n_mels = self.n_mels.unwrap_or(c.n_mels);
        c.width = self.width.unwrap_or(c.width);
        c.fmin = self.fmin.unwrap_or(c.fmin);
        c.fmax = self.fmax.unwrap_or(c.fmax);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct Wav2Spec {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dsp: DspOpts,
}

#[derive(Args)]
struct Spec2Wav {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dsp: DspOpts,
    #[arg(long)]
    sample_rate: Option<u32>,
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
}

#[derive(Args)]
struct Info {
    #[arg(long, conflicts_with = "scale")]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Also time one inference forward pass on a blank sequence.
    #[arg(long)]
    forward: bool,
}

enum CliError {
    Input(String),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) | Error::Shape { .. } | Error::UndefinedCorrelation(_) => Self::Internal(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }
}

type Res = Result<(), CliError>;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn write_text(path: &Path, text: &str) -> Res {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn load_data(dir: &Path, cfg: &TrainConfig) -> Result<Dataset, CliError> {
    if !dir.is_dir() {
        return Err(input(format!("data directory {} does not exist", dir.display())));
    }
    let items = load_corpus(dir)?;
    Ok(Dataset::new(&items, &cfg.scale.model(), cfg.scale.mel(), cfg.crop_stride)?)
}

fn gen_data(a: GenData) -> Res {
    if !a.force {
        if let Ok(mut entries) = std::fs::read_dir(&a.out) {
            if entries.next().is_some() {
                return Err(input(format!(
                    "{} exists and is not empty (use --force to write into it)",
                    a.out.display()
                )));
            }
        }
    }
    let m = make_corpus(&a.scale.corpus(a.subjects, a.classes, a.seed), &a.out)?;
    eprintln!("wrote {} items to {}", m.rows.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: Train) -> Res {
    let cfg = a.opts.resolve()?;
    let data = load_data(&a.opts.data, &cfg)?;
    let pool: Vec<usize> = match a.holdout {
        Some(s) => data.pool_without(s),
        None => (0..data.items.len()).collect(),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let out = train(&cfg, &data, &pool, |step, m| {
        checkpoint_of(m, &cfg).save(&a.out.join(format!("step_{step:06}.sq2c")))
    })?;
    checkpoint_of(&out.model, &cfg).save(&a.out.join("model.sq2c"))?;
    write_text(&a.out.join("train_log.csv"), &out.log.to_csv())?;
    let (first, last) = out.log.rec_ends(20);
    eprintln!(
        "{} steps ({}), L_rec {first:.5} -> {last:.5}; wrote {}",
        cfg.steps,
        cfg.ablation.label(),
        a.out.join("model.sq2c").display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(Translator<f32>, TrainConfig), CliError> {
    let ck = Checkpoint::load(path)?;
    Ok((Translator::from_checkpoint(&ck)?, train_config_of(&ck)?))
}

fn synth(a: Synth) -> Res {
    let start = Instant::now();
    let (model, cfg) = load_model(&a.ckpt)?;
    let bytes = std::fs::read(&a.seq).map_err(|e| Error::io(&a.seq, e))?;
    let seq = Tensor::<f32>::read_from(&mut bytes.as_slice())?;
    let spec = MelSpec::from_tensor(&model.translate(&seq, cfg.attention())?)?;
    let mel = cfg.scale.mel();
    let wav = melspec_to_wav(&spec, &mel, a.gl_iters)?;
    write_pgm(&a.out_pgm, &spec)?;
    write_wav(&a.out_wav, &wav)?;
    eprintln!("synthesized in {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_eval(a: Eval) -> Res {
    let (model, cfg) = load_model(&a.ckpt)?;
    let data = load_data(&a.data, &cfg)?;
    let idx: Vec<usize> = (0..data.items.len())
        .filter(|&i| a.subjects.is_empty() || a.subjects.contains(&data.items[i].subject))
        .collect();
    if idx.is_empty() {
        return Err(input("no corpus items match --subjects"));
    }
    let r = evaluate(&model, &data, &idx, cfg.attention(), &cfg.ablation.label(), cfg.seed)?;
    write_text(&a.out, &r.to_csv())?;
    report_summary(&r);
    Ok(())
}

fn report_summary(r: &EvalReport) {
    let (c, cs) = r.corr2d();
    let (l, ls) = r.lsd();
    eprintln!(
        "{} seed {}: {} items, Corr2D {c:.4} +- {cs:.4}, LSD {l:.2} +- {ls:.2} dB",
        r.label,
        r.seed,
        r.items.len()
    );
}

fn items_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{}\n", sq2s_core::metrics::ITEM_CSV_HEADER);
    for r in reports {
        r.append_csv_rows(&mut out);
    }
    out
}

fn loo(a: Loo) -> Res {
    let cfg = a.opts.resolve()?;
    let data = load_data(&a.opts.data, &cfg)?;
    let reports = leave_one_out_eval(&cfg, &data, &a.seeds, &a.folds)?;
    write_text(&a.out.join("loo_items.csv"), &items_csv(&reports))?;
    let table = AblationReport::from_runs(&reports);
    write_text(&a.out.join("loo_summary.csv"), &table.to_csv())?;
    reports.iter().for_each(report_summary);
    Ok(())
}

fn ablate(a: Loo) -> Res {
    let cfg = a.opts.resolve()?;
    let data = load_data(&a.opts.data, &cfg)?;
    let (table, runs) = ablation_grid(&cfg, &data, &a.seeds, &a.folds)?;
    write_text(&a.out.join("ablation_items.csv"), &items_csv(&runs))?;
    write_text(&a.out.join("ablation.csv"), &table.to_csv())?;
    write_text(&a.out.join("ablation.txt"), &table.to_text())?;
    eprint!("{}", table.to_text());
    let missing = table.missing();
    if !missing.is_empty() {
        return Err(CliError::Internal(format!("absent rows: {}", missing.join(", "))));
    }
    Ok(())
}

fn cmd_sweep(a: SweepCmd) -> Res {
    let cfg = a.opts.resolve()?;
    let (param, grid) = match (&a.beta_grid, &a.lambda_grid) {
        (Some(g), None) => (SweepParam::Beta, g),
        (None, Some(g)) => (SweepParam::Lambda, g),
        _ => return Err(input("give exactly one of --beta-grid, --lambda-grid")),
    };
    let values = parse_grid(grid)?;
    let data = load_data(&a.opts.data, &cfg)?;
    let r = sweep(&cfg, &data, param, &values, &a.seeds, &a.folds)?;
    write_text(&a.out, &r.to_csv())?;
    eprintln!("{} rows written to {}", r.rows.len(), a.out.display());
    Ok(())
}

fn wav2spec(a: Wav2Spec) -> Res {
    let wav = read_wav::<f64>(&a.input)?;
    let cfg = a.dsp.config(Some(wav.sample_rate))?;
    let spec = wav_to_melspec(&wav, &cfg)?;
    write_pgm(&a.out, &spec)?;
    Ok(())
}

fn spec2wav(a: Spec2Wav) -> Res {
    let spec = read_pgm::<f64>(&a.input)?;
    let mut cfg = a.dsp.config(a.sample_rate)?;
    if spec.n_mels != cfg.n_mels {
        return Err(input(format!("spectrogram has {} bands, config expects {}", spec.n_mels, cfg.n_mels)));
    }
    cfg.width = spec.width;
    let wav = melspec_to_wav(&spec, &cfg, a.gl_iters)?;
    write_wav(&a.out, &wav)?;
    Ok(())
}

fn info(a: Info) -> Res {
    let model = match &a.ckpt {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            println!("{}", ck.metadata.trim_end());
            Translator::<f32>::from_checkpoint(&ck)?
        }
        None => Translator::<f32>::new(a.scale.model(), 0)?,
    };
    let c = model.param_counts();
    println!(
        "parameters: translator {} attention {} discriminator {} total {}",
        c.translator,
        c.attention,
        c.discriminator,
        c.total()
    );
    let cfg = &model.config;
    println!(
        "input {}x{}x{} (T x H x W) -> spectrogram {}x{}; bottleneck {:?}",
        cfg.frames, cfg.height, cfg.width, cfg.spec_bands, cfg.spec_frames, model.plan.bottleneck
    );
    if a.forward {
        let start = Instant::now();
        let x = Tensor::<f32>::zeros(&[cfg.frames, cfg.height, cfg.width]);
        let spec = model.translate(&x, true)?;
        println!("forward {:?} in {:.2} s", spec.shape(), start.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Loo(a) => loo(a),
        Command::Ablate(a) => ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Wav2spec(a) => wav2spec(a),
        Command::Spec2wav(a) => spec2wav(a),
        Command::Info(a) => info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(1)
        }
    }
}
