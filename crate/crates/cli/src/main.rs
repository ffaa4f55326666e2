//! photosketch: patch-based photo-to-sketch synthesis.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 internal invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use photosketch::blend::{blend_full_coverage, blend_with_strategy, seam_energy, BlendStrategy};
use photosketch::dataset::{gen_synthetic_pairs, load_manifest, SyntheticStyle};
use photosketch::error::Error;
use photosketch::image::{load_image, rmse, save_image, GrayImage};
use photosketch::mrf::synthesize_crude;
use photosketch::nmf::{
    load_dictionary_set, read_dictionary_header, retrain_sketch, save_dictionary_set,
    train_dictionaries,
};
use photosketch::patching::make_grid;
use photosketch::pipeline::{prepare_photo, synthesize, train_stage2_dictionaries, PipelineConfig};
use photosketch::pyramid::auto_levels;

#[derive(Parser)]
#[command(name = "photosketch", version, about = "Photo-to-sketch synthesis")]
struct Cli {
    /// Config file of `key = value` lines (overridden by flags)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap on worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigOverrides {
    /// NMF dictionary size r
    #[arg(long)]
    rank: Option<usize>,

    /// Seed for every stochastic stage
    #[arg(long)]
    seed: Option<u64>,

    /// Max NMF training iterations per location
    #[arg(long)]
    nmf_iters: Option<usize>,

    /// Relative-objective stopping tolerance
    #[arg(long)]
    rel_tol: Option<f64>,

    /// Candidates per MRF node
    #[arg(long)]
    k: Option<usize>,

    /// Candidate search radius in pixels
    #[arg(long)]
    search_radius: Option<usize>,

    /// Smoothness weight
    #[arg(long)]
    lambda: Option<f64>,

    /// Belief-propagation iterations
    #[arg(long)]
    bp_iters: Option<usize>,

    /// Spline levels for patch blending (0 = automatic)
    #[arg(long)]
    blend_levels: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train per-location NMF dictionaries from a manifest of pairs
    TrainDicts {
        /// Manifest of photo<TAB>sketch lines
        #[arg(long)]
        manifest: PathBuf,
        /// Output dictionary file
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Synthesize a sketch from a photo
    Synthesize {
        #[arg(long)]
        photo: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Trained dictionary file
        #[arg(long)]
        dict: PathBuf,
        /// Output sketch image
        #[arg(long)]
        out: PathBuf,
        /// Also write the stage-1 crude sketch
        #[arg(long)]
        dump_crude: bool,
        /// Write per-pass canvases (pass1.pgm, pass2.pgm, pass3.pgm) here
        #[arg(long)]
        dump_passes: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Reassemble the same retrained patches under every blend strategy
    BlendCompare {
        #[arg(long)]
        photo: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        /// Directory for the four images and report.txt
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Generate a deterministic synthetic photo/sketch corpus
    GenSynthetic {
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of pairs
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 60)]
        height: usize,
        #[arg(long, default_value_t = 60)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1.5)]
        edge_gain: f64,
        #[arg(long, default_value_t = 2)]
        blur_radius: usize,
    },
    /// Print rmse and seam energy of a result against a reference
    Eval {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Print the header of a dictionary file
    DictInfo {
        #[arg(long)]
        dict: PathBuf,
    },
}

fn effective_config(
    config_path: Option<&Path>,
    overrides: &ConfigOverrides,
) -> Result<PipelineConfig, Error> {
    let mut config = PipelineConfig::default();
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        config.apply_config_text(&text)?;
    }
    if let Some(v) = overrides.rank {
        config.rank = v;
    }
    if let Some(v) = overrides.seed {
        config.seed = v;
    }
    if let Some(v) = overrides.nmf_iters {
        config.nmf_iters = v;
    }
    if let Some(v) = overrides.rel_tol {
        config.rel_tol = v;
    }
    if let Some(v) = overrides.k {
        config.k = v;
    }
    if let Some(v) = overrides.search_radius {
        config.search_radius = v;
    }
    if let Some(v) = overrides.lambda {
        config.lambda = v;
    }
    if let Some(v) = overrides.bp_iters {
        config.bp_iters = v;
    }
    if let Some(v) = overrides.blend_levels {
        config.blend_levels = v;
    }
    config.validate()?;
    Ok(config)
}

/// Echo the effective configuration next to an output for reproducibility.
fn write_sidecar(output: &Path, config: &PipelineConfig) -> Result<(), Error> {
    let dir = output.parent().unwrap_or_else(|| Path::new("."));
    let path = dir.join("run.cfg");
    std::fs::write(&path, config.to_key_values()).map_err(|e| Error::io(path, e))
}

fn require_file(path: &Path, what: &str) -> Result<(), Error> {
    if !path.is_file() {
        return Err(Error::InvalidParameter(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_train_dicts(
    manifest: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<(), Error> {
    let pairs = load_manifest(manifest, config.nmf_patch, config.nmf_overlap)?;
    println!(
        "loaded {} training pairs at {}x{}",
        pairs.len(),
        pairs[0].photo.height(),
        pairs[0].photo.width()
    );
    let (set, objectives) = train_stage2_dictionaries(&pairs, config)?;
    save_dictionary_set(&set, out)?;
    let mut sorted = objectives.clone();
    sorted.sort_by(f64::total_cmp);
    println!(
        "trained {} dictionaries (r = {}); final objective min {:.6} median {:.6} max {:.6}",
        set.dictionaries.len(),
        config.rank,
        sorted[0],
        sorted[sorted.len() / 2],
        sorted[sorted.len() - 1],
    );
    println!("wrote {}", out.display());
    write_sidecar(out, config)
}

fn cmd_synthesize(
    photo_path: &Path,
    manifest: &Path,
    dict: &Path,
    out: &Path,
    dump_crude: bool,
    dump_passes: Option<&Path>,
    config: &PipelineConfig,
) -> Result<(), Error> {
    require_file(dict, "dictionary file")?;
    let photo = load_image(photo_path)?;
    let training = load_manifest(manifest, config.nmf_patch, config.nmf_overlap)?;
    let dicts = load_dictionary_set(dict)?;
    let output = synthesize(&photo, &training, &dicts, config)?;
    save_image(output.final_sketch(), out)?;
    println!("wrote {}", out.display());
    if dump_crude {
        let crude_path = sibling(out, "_crude");
        save_image(&output.crude, &crude_path)?;
        println!("wrote {}", crude_path.display());
    }
    if let Some(dir) = dump_passes {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, img) in [
            ("pass1.pgm", &output.passes.after_pass1),
            ("pass2.pgm", &output.passes.after_pass2),
            ("pass3.pgm", &output.passes.after_pass3),
        ] {
            let path = dir.join(name);
            save_image(img, &path)?;
            println!("wrote {}", path.display());
        }
    }
    write_sidecar(out, config)
}

// out.pgm -> out<suffix>.pgm
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("pgm");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn cmd_blend_compare(
    photo_path: &Path,
    manifest: &Path,
    dict: &Path,
    out_dir: &Path,
    config: &PipelineConfig,
) -> Result<(), Error> {
    require_file(dict, "dictionary file")?;
    let photo = load_image(photo_path)?;
    let training = load_manifest(manifest, config.nmf_patch, config.nmf_overlap)?;
    let dicts = load_dictionary_set(dict)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let photo = prepare_photo(&photo, config)?;
    let crude = synthesize_crude(&photo, &training, &config.crude_params())?;
    let grid20 = dicts.grid;
    let retrained20 = retrain_sketch(&crude, &dicts, config.proj_iters, config.rel_tol)?;

    // the same retrained patches under the three strategies
    let average = blend_with_strategy(&retrained20, &grid20, BlendStrategy::Average, config.levels())?;
    let mincut = blend_with_strategy(&retrained20, &grid20, BlendStrategy::MinCut, config.levels())?;
    let spline20 = blend_with_strategy(&retrained20, &grid20, BlendStrategy::Spline, config.levels())?;

    // the spline path again at the small patch size
    let grid10 = make_grid(photo.height(), photo.width(), 10, 5)?;
    let sketches: Vec<GrayImage> = training.iter().map(|p| p.sketch.clone()).collect();
    let rank10 = config.rank.min(10 * 10);
    let (dicts10, _) = train_dictionaries(&sketches, &grid10, rank10, &config.nmf_params())?;
    let retrained10 = retrain_sketch(&crude, &dicts10, config.proj_iters, config.rel_tol)?;
    let spline10 = blend_full_coverage(&retrained10, &grid10, auto_levels(10))?;

    let mut report = String::new();
    for (name, img) in [
        ("average", &average),
        ("mincut", &mincut),
        ("spline10", &spline10),
        ("spline20", &spline20),
    ] {
        let path = out_dir.join(format!("{name}.pgm"));
        save_image(img, &path)?;
        // one boundary set for all four, so the numbers are comparable
        let energy = seam_energy(img, &grid20)?;
        report.push_str(&format!("{name} {energy:.9e}\n"));
    }
    let report_path = out_dir.join("report.txt");
    std::fs::write(&report_path, &report).map_err(|e| Error::io(&report_path, e))?;
    print!("{report}");
    println!("wrote 4 images and report.txt to {}", out_dir.display());
    write_sidecar(&report_path, config)
}

fn cmd_gen_synthetic(
    out_dir: &Path,
    count: usize,
    height: usize,
    width: usize,
    style: &SyntheticStyle,
) -> Result<(), Error> {
    let pairs = gen_synthetic_pairs(count, height, width, style)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::new();
    for (i, pair) in pairs.iter().enumerate() {
        let photo = format!("photo_{i:03}.pgm");
        let sketch = format!("sketch_{i:03}.pgm");
        save_image(&pair.photo, out_dir.join(&photo))?;
        save_image(&pair.sketch, out_dir.join(&sketch))?;
        manifest.push_str(&format!("{photo}\t{sketch}\n"));
    }
    let manifest_path = out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    println!(
        "wrote {count} pairs ({height}x{width}, seed {}) and manifest.txt to {}",
        style.seed,
        out_dir.display()
    );
    Ok(())
}

fn cmd_eval(result: &Path, reference: &Path, config: &PipelineConfig) -> Result<(), Error> {
    let a = load_image(result)?;
    let b = load_image(reference)?;
    let err = rmse(&a, &b)?;
    let grid = make_grid(a.height(), a.width(), config.nmf_patch, config.nmf_overlap)?;
    println!("rmse {err:.9e}");
    println!("seam_energy {:.9e}", seam_energy(&a, &grid)?);
    Ok(())
}

fn cmd_dict_info(dict: &Path) -> Result<(), Error> {
    require_file(dict, "dictionary file")?;
    let h = read_dictionary_header(dict)?;
    println!("version {}", h.version);
    println!("patch {}", h.patch);
    println!("overlap {}", h.overlap);
    println!("rows {}", h.rows);
    println!("cols {}", h.cols);
    println!("rank {}", h.rank);
    println!("dim {}", h.dim);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::InvalidParameter("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    let config_path = cli.config.as_deref();
    match &cli.command {
        Command::TrainDicts {
            manifest,
            out,
            overrides,
        } => {
            let config = effective_config(config_path, overrides)?;
            cmd_train_dicts(manifest, out, &config)
        }
        Command::Synthesize {
            photo,
            manifest,
            dict,
            out,
            dump_crude,
            dump_passes,
            overrides,
        } => {
            let config = effective_config(config_path, overrides)?;
            cmd_synthesize(
                photo,
                manifest,
                dict,
                out,
                *dump_crude,
                dump_passes.as_deref(),
                &config,
            )
        }
        Command::BlendCompare {
            photo,
            manifest,
            dict,
            out_dir,
            overrides,
        } => {
            let config = effective_config(config_path, overrides)?;
            cmd_blend_compare(photo, manifest, dict, out_dir, &config)
        }
        Command::GenSynthetic {
            out_dir,
            count,
            height,
            width,
            seed,
            gamma,
            edge_gain,
            blur_radius,
        } => cmd_gen_synthetic(
            out_dir,
            *count,
            *height,
            *width,
            &SyntheticStyle {
                seed: *seed,
                gamma: *gamma,
                edge_gain: *edge_gain,
                blur_radius: *blur_radius,
            },
        ),
        Command::Eval {
            result,
            reference,
            overrides,
        } => {
            let config = effective_config(config_path, overrides)?;
            cmd_eval(result, reference, &config)
        }
        Command::DictInfo { dict } => cmd_dict_info(dict),
    }
}

fn main() -> ExitCode {
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
        Err(e @ Error::Internal(_)) => {
            eprintln!("internal error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
