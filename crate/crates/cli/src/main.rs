//! `hdrfuse` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric or contract
//! failure. Results go to stdout or files, diagnostics to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hdrfuse::classical::{adaptive_mef, MefParams};
use hdrfuse::gamma::{gamma_from_attributes, render_attribute_maps, AttributeKind};
use hdrfuse::loss::LossConfig;
use hdrfuse::metrics::{mef_ssim_luma, MefSsimReport, SsimWindowSpec};
use hdrfuse::model::FusionModel;
use hdrfuse::table::classical_table;
use hdrfuse::train::{evaluate_gamma_table, train, TrainConfig};
use hdrfuse::{config, ExposurePair, Image, WeightMap};

#[derive(Parser)]
#[command(name = "hdrfuse", version, about = "Multi-exposure fusion with classical and learned weight maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive-weight classical fusion of an under/over pair.
    FuseClassical(FuseArgs),
    /// Fusion with a trained weight-map network.
    FuseLearned {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        fuse: FuseArgs,
    },
    /// Trains a weight-map network on a directory of scenes.
    Train(TrainArgs),
    /// MEF-SSIM of a fused image against its exposure stack.
    Eval {
        #[arg(long, num_args = 2.., required = true)]
        stack: Vec<PathBuf>,
        #[arg(long)]
        fused: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Renders attribute maps and γ maps for an under/over pair.
    GammaViz {
        #[arg(long)]
        under: PathBuf,
        #[arg(long)]
        over: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Only render this attribute (default: all six).
        #[arg(long)]
        gamma: Option<AttributeKind>,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Classical fusion and both single-weight ablations over a scene directory.
    Table1 {
        dir: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Trains one network per γ kind and scores each on a scene directory.
    Table2 {
        dir: PathBuf,
        /// Only this γ kind (default: the five table configurations).
        #[arg(long)]
        gamma: Option<AttributeKind>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Dynamic range, log10(max/min), of an image.
    Dr {
        #[arg(long)]
        image: PathBuf,
    },
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    under: PathBuf,
    #[arg(long)]
    over: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Writes `<prefix>_0.png` and `<prefix>_1.png`.
    #[arg(long)]
    weights_out: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct WindowArgs {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Per-window MEF-SSIM map.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Per-window MEF-SSIM scores.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width_mult: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// One subdirectory per scene with `under.*` and `over.*`.
    corpus: PathBuf,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gamma: Option<AttributeKind>,
    /// Loss window size.
    #[arg(long)]
    window: Option<usize>,
    /// Loss window stride.
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
}

type CliResult<T> = hdrfuse::Result<T>;

fn io_failure(path: &Path, e: std::io::Error) -> hdrfuse::Error {
    hdrfuse::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Output files are written under temporary names and renamed into place
/// only once the whole command has succeeded; anything left uncommitted is
/// removed on drop.
#[derive(Default)]
struct Staging {
    pending: Vec<(PathBuf, PathBuf)>,
}

impl Staging {
    fn temp_for(&mut self, target: &Path) -> PathBuf {
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        // keep the extension last so the image writer picks the format
        let tmp = target.with_file_name(format!(".{}.partial-{}", std::process::id(), name));
        self.pending.push((tmp.clone(), target.to_path_buf()));
        tmp
    }

    fn image(&mut self, img: &Image, target: &Path) -> CliResult<()> {
        let tmp = self.temp_for(target);
        img.save(&tmp)
    }

    fn text(&mut self, text: &str, target: &Path) -> CliResult<()> {
        let tmp = self.temp_for(target);
        fs::write(&tmp, text).map_err(|e| io_failure(&tmp, e))
    }

    fn commit(mut self) -> CliResult<()> {
        for (tmp, target) in std::mem::take(&mut self.pending) {
            fs::rename(&tmp, &target).map_err(|e| io_failure(&target, e))?;
        }
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
    }
}

impl WindowArgs {
    fn spec(&self, base: SsimWindowSpec) -> CliResult<SsimWindowSpec> {
        let size = self.window.unwrap_or(base.window_size);
        let stride = self.stride.unwrap_or(base.stride);
        SsimWindowSpec::with_geometry(size, stride)
    }
}

impl TrainFlags {
    fn configs(&self, loss: &mut LossConfig) -> CliResult<TrainConfig> {
        let mut tc = TrainConfig::default();
        if let Some(path) = &self.config {
            config::load(path, &mut tc, loss)?;
        }
        if let Some(seed) = self.seed {
            tc.seed = seed;
        }
        if let Some(w) = self.width_mult {
            tc.width_multiplier = w;
        }
        if let Some(e) = self.epochs {
            tc.epochs = e;
        }
        tc.deterministic |= self.deterministic;
        tc.validate()?;
        if tc.deterministic {
            hdrfuse::nn::set_deterministic(true);
        }
        Ok(tc)
    }
}

fn write_report(report: &MefSsimReport, args: &ReportArgs, staging: &mut Staging) -> CliResult<()> {
    if let Some(path) = &args.heatmap {
        staging.image(&report.heatmap(), path)?;
    }
    if let Some(path) = &args.csv {
        staging.text(&report.to_csv(), path)?;
    }
    Ok(())
}

fn weights_target(prefix: &Path, k: usize) -> PathBuf {
    let name = prefix.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    prefix.with_file_name(format!("{name}_{k}.png"))
}

fn finish_fusion(args: &FuseArgs, pair: &ExposurePair, fused: &Image, wmap: &WeightMap) -> CliResult<()> {
    let spec = args.window.spec(SsimWindowSpec::default())?;
    let report = mef_ssim_luma(&[pair.under().clone(), pair.over().clone()], fused, &spec)?;
    let mut staging = Staging::default();
    staging.image(fused, &args.out)?;
    if let Some(prefix) = &args.weights_out {
        for (k, w) in wmap.to_images().iter().enumerate() {
            staging.image(w, &weights_target(prefix, k))?;
        }
    }
    write_report(&report, &args.report, &mut staging)?;
    staging.commit()?;
    println!("mef_ssim={:.6}", report.global_score);
    Ok(())
}

/// The file in `dir` whose stem is `stem` (`under.png`, `over.ppm`, ...).
fn find_exposure(dir: &Path, stem: &str) -> CliResult<PathBuf> {
    ["png", "ppm", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            io_failure(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("no {stem}.png/.ppm/.pgm")),
            )
        })
}

fn scene_dirs(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| io_failure(dir, e))?;
    let mut scenes = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_failure(dir, e))?.path();
        if path.is_dir() {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            scenes.push((name, path));
        }
    }
    scenes.sort();
    if scenes.is_empty() {
        return Err(io_failure(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no scene subdirectories"),
        ));
    }
    Ok(scenes)
}

fn load_pairs(dir: &Path) -> CliResult<Vec<(String, ExposurePair)>> {
    scene_dirs(dir)?
        .into_iter()
        .map(|(name, path)| {
            let pair = ExposurePair::load(find_exposure(&path, "under")?, find_exposure(&path, "over")?)?;
            Ok((name, pair))
        })
        .collect()
}

/// Every image in a scene directory, in file-name order.
fn load_stack(dir: &Path) -> CliResult<Vec<Image>> {
    find_exposure(dir, "under")?;
    find_exposure(dir, "over")?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_failure(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm"))
        })
        .collect();
    files.sort();
    files.iter().map(Image::load).collect()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::FuseClassical(args) => {
            let pair = ExposurePair::load(&args.under, &args.over)?;
            let (fused, wmap) = adaptive_mef(&pair, &MefParams::default())?;
            finish_fusion(&args, &pair, &fused, &wmap)
        }
        Command::FuseLearned { model, fuse: args } => {
            let model = FusionModel::<f32>::load(&model)?;
            let pair = ExposurePair::load(&args.under, &args.over)?;
            let wmap = model.predict_weights(&pair)?;
            let fused = hdrfuse::fuse(&[pair.under().clone(), pair.over().clone()], &wmap)?;
            finish_fusion(&args, &pair, &fused, &wmap)
        }
        Command::Train(args) => {
            let mut lc = LossConfig::default();
            let tc = args.train.configs(&mut lc)?;
            if let Some(kind) = args.gamma {
                lc.gamma_kind = kind;
            }
            lc.window = WindowArgs {
                window: args.window,
                stride: args.stride,
            }
            .spec(lc.window)?;
            let corpus: Vec<ExposurePair> = load_pairs(&args.corpus)?.into_iter().map(|(_, p)| p).collect();
            let outcome = train::<f32>(&corpus, &tc, &lc, Some(&args.out), |e| println!("{}", e.to_line()))?;
            log::info!("final mean loss {:.6}", outcome.final_mean_loss());
            Ok(())
        }
        Command::Eval {
            stack,
            fused,
            window,
            report: report_args,
        } => {
            let stack: Vec<Image> = stack.iter().map(Image::load).collect::<hdrfuse::Result<_>>()?;
            let fused = Image::load(&fused)?;
            let report = mef_ssim_luma(&stack, &fused, &window.spec(SsimWindowSpec::default())?)?;
            let mut staging = Staging::default();
            write_report(&report, &report_args, &mut staging)?;
            staging.commit()?;
            println!("mef_ssim={:.6}", report.global_score);
            Ok(())
        }
        Command::GammaViz {
            under,
            over,
            out,
            gamma,
            window,
        } => {
            let pair = ExposurePair::load(&under, &over)?;
            let lc = LossConfig::default();
            let spec = window.spec(lc.window)?;
            fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
            let kinds = gamma.map_or(AttributeKind::ALL.to_vec(), |k| vec![k]);
            let gray = pair.to_grayscale();
            let mut staging = Staging::default();
            for kind in kinds {
                let (a, b) = render_attribute_maps(&pair, kind, &spec, lc.sigma_e)?;
                staging.image(&a, &out.join(format!("{kind}_under.png")))?;
                staging.image(&b, &out.join(format!("{kind}_over.png")))?;
                let attr_u = hdrfuse::gamma::attribute_map(gray.under(), kind, &spec, lc.sigma_e)?;
                let attr_o = hdrfuse::gamma::attribute_map(gray.over(), kind, &spec, lc.sigma_e)?;
                let g = gamma_from_attributes(&attr_u, &attr_o, lc.gamma_floor)?;
                staging.image(&g.under_plane().to_image(1.0), &out.join(format!("{kind}_gamma.png")))?;
            }
            staging.commit()
        }
        Command::Table1 { dir, window, csv } => {
            let scenes = scene_dirs(&dir)?
                .into_iter()
                .map(|(name, path)| Ok((name, load_stack(&path)?)))
                .collect::<CliResult<Vec<_>>>()?;
            let table = classical_table(&scenes, &MefParams::default(), &window.spec(SsimWindowSpec::default())?)?;
            emit_table(&table.to_csv(), csv.as_deref())
        }
        Command::Table2 { dir, gamma, train: flags, csv } => {
            let mut lc = LossConfig::default();
            let tc = flags.configs(&mut lc)?;
            let kinds = gamma.map_or(AttributeKind::TABLE.to_vec(), |k| vec![k]);
            let configs: Vec<LossConfig> = kinds.into_iter().map(|k| LossConfig { gamma_kind: k, ..lc }).collect();
            let corpus = load_pairs(&dir)?;
            let table = evaluate_gamma_table(&corpus, &configs, &tc, |lc, e| {
                log::info!("{}: {}", lc.gamma_kind, e.to_line());
            })?;
            emit_table(&table.to_csv(), csv.as_deref())
        }
        Command::Dr { image } => {
            let img = Image::load(&image)?;
            println!("dr={:.6}", img.dynamic_range());
            Ok(())
        }
    }
}

fn emit_table(csv: &str, path: Option<&Path>) -> CliResult<()> {
    if let Some(path) = path {
        let mut staging = Staging::default();
        staging.text(csv, path)?;
        staging.commit()?;
    }
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 3 })
        }
    }
}
