//! End-to-end orchestration: crude sketch, per-location retraining, and
//! full-coverage recombination under one configuration.

use crate::blend::{blend_full_coverage_passes, BlendPasses};
use crate::error::{Error, Result};
use crate::image::{crop_to_grid, GrayImage};
use crate::mrf::{synthesize_crude, CrudeParams, TrainingPair};
use crate::nmf::{retrain_sketch, train_dictionaries, DictionarySet, NmfParams};
use crate::patching::make_grid;
use crate::pyramid::{auto_levels, DEFAULT_KERNEL_A};

/// Every knob of the three-stage pipeline, with the standard defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub mrf_patch: usize,
    pub mrf_overlap: usize,
    pub k: usize,
    pub search_radius: usize,
    pub lambda: f64,
    pub bp_iters: usize,
    pub damping: f64,
    pub nmf_patch: usize,
    pub nmf_overlap: usize,
    pub rank: usize,
    pub nmf_iters: usize,
    pub rel_tol: f64,
    pub proj_iters: usize,
    pub seed: u64,
    pub kernel_a: f64,
    /// Spline levels for patch blending; 0 selects the automatic rule
    /// `max(2, floor(log2 patch) - 2)`.
    pub blend_levels: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mrf_patch: 10,
            mrf_overlap: 5,
            k: 10,
            search_radius: 5,
            lambda: 1.0,
            bp_iters: 30,
            damping: 0.5,
            nmf_patch: 20,
            nmf_overlap: 10,
            rank: 20,
            nmf_iters: 500,
            rel_tol: 1e-5,
            proj_iters: 200,
            seed: 0,
            kernel_a: DEFAULT_KERNEL_A,
            blend_levels: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mrf_patch", self.mrf_patch),
            ("mrf_overlap", self.mrf_overlap),
            ("k", self.k),
            ("bp_iters", self.bp_iters),
            ("nmf_patch", self.nmf_patch),
            ("nmf_overlap", self.nmf_overlap),
            ("rank", self.rank),
            ("nmf_iters", self.nmf_iters),
            ("proj_iters", self.proj_iters),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.mrf_overlap >= self.mrf_patch {
            return Err(Error::InvalidParameter(
                "mrf_overlap must be smaller than mrf_patch".into(),
            ));
        }
        if self.nmf_patch != 2 * self.nmf_overlap {
            return Err(Error::InvalidParameter(format!(
                "full coverage needs nmf_patch == 2 * nmf_overlap, got {} vs {}",
                self.nmf_patch, self.nmf_overlap
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter("lambda must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter(format!(
                "damping {} outside [0,1)",
                self.damping
            )));
        }
        Ok(())
    }

    pub fn crude_params(&self) -> CrudeParams {
        CrudeParams {
            patch: self.mrf_patch,
            overlap: self.mrf_overlap,
            k: self.k,
            search_radius: self.search_radius,
            lambda: self.lambda,
            bp_iters: self.bp_iters,
            damping: self.damping,
        }
    }

    pub fn nmf_params(&self) -> NmfParams {
        NmfParams {
            max_iters: self.nmf_iters,
            rel_tol: self.rel_tol,
            seed: self.seed,
        }
    }

    pub fn levels(&self) -> usize {
        if self.blend_levels == 0 {
            auto_levels(self.nmf_patch)
        } else {
            self.blend_levels
        }
    }

    /// The effective configuration as `key = value` lines, one per knob.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("mrf_patch", self.mrf_patch.to_string());
        push("mrf_overlap", self.mrf_overlap.to_string());
        push("k", self.k.to_string());
        push("search_radius", self.search_radius.to_string());
        push("lambda", self.lambda.to_string());
        push("bp_iters", self.bp_iters.to_string());
        push("damping", self.damping.to_string());
        push("nmf_patch", self.nmf_patch.to_string());
        push("nmf_overlap", self.nmf_overlap.to_string());
        push("rank", self.rank.to_string());
        push("nmf_iters", self.nmf_iters.to_string());
        push("rel_tol", self.rel_tol.to_string());
        push("proj_iters", self.proj_iters.to_string());
        push("seed", self.seed.to_string());
        push("kernel_a", self.kernel_a.to_string());
        push("blend_levels", self.blend_levels.to_string());
        s
    }

    /// Apply one `key = value` setting; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("cannot parse {value:?} for {key}"))
            })
        }
        match key {
            "mrf_patch" => self.mrf_patch = parse(key, value)?,
            "mrf_overlap" => self.mrf_overlap = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "search_radius" => self.search_radius = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "bp_iters" => self.bp_iters = parse(key, value)?,
            "damping" => self.damping = parse(key, value)?,
            "nmf_patch" => self.nmf_patch = parse(key, value)?,
            "nmf_overlap" => self.nmf_overlap = parse(key, value)?,
            "rank" => self.rank = parse(key, value)?,
            "nmf_iters" => self.nmf_iters = parse(key, value)?,
            "rel_tol" => self.rel_tol = parse(key, value)?,
            "proj_iters" => self.proj_iters = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "kernel_a" => self.kernel_a = parse(key, value)?,
            "blend_levels" => self.blend_levels = parse(key, value)?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parse a `key = value` config file body (`#` starts a comment).
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("config line {}: expected key = value", i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// All artifacts of one synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    /// Photo after cropping to grid-valid dimensions.
    pub photo: GrayImage,
    /// Stage-1 sketch.
    pub crude: GrayImage,
    /// Stage-3 canvases, one per pass; `after_pass3` is the final sketch.
    pub passes: BlendPasses,
}

impl SynthesisOutput {
    pub fn final_sketch(&self) -> &GrayImage {
        &self.passes.after_pass3
    }
}

/// Crop the photo so both pipeline grids divide it.
pub fn prepare_photo(photo: &GrayImage, config: &PipelineConfig) -> Result<GrayImage> {
    let cropped = crop_to_grid(photo, config.nmf_patch, config.nmf_overlap)?;
    // the coarser crop must already satisfy the finer stage-1 grid
    make_grid(
        cropped.height(),
        cropped.width(),
        config.mrf_patch,
        config.mrf_overlap,
    )?;
    Ok(cropped)
}

/// Run the full pipeline against pre-trained dictionaries.
pub fn synthesize(
    photo: &GrayImage,
    training: &[TrainingPair],
    dicts: &DictionarySet,
    config: &PipelineConfig,
) -> Result<SynthesisOutput> {
    config.validate()?;
    let photo = prepare_photo(photo, config)?;
    if photo.height() != dicts.grid.image_h || photo.width() != dicts.grid.image_w {
        return Err(Error::DimensionMismatch(format!(
            "photo crops to {}x{} but the dictionaries cover {}x{}",
            photo.height(),
            photo.width(),
            dicts.grid.image_h,
            dicts.grid.image_w
        )));
    }
    let crude = synthesize_crude(&photo, training, &config.crude_params())?;
    let retrained = retrain_sketch(&crude, dicts, config.proj_iters, config.rel_tol)?;
    let passes = blend_full_coverage_passes(&retrained, &dicts.grid, config.levels())?;
    Ok(SynthesisOutput {
        photo,
        crude,
        passes,
    })
}

/// Train the stage-2 dictionaries from training sketches, returning the set
/// and each location's final objective.
pub fn train_stage2_dictionaries(
    training: &[TrainingPair],
    config: &PipelineConfig,
) -> Result<(DictionarySet, Vec<f64>)> {
    config.validate()?;
    if training.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let h = training[0].photo.height();
    let w = training[0].photo.width();
    let grid = make_grid(h, w, config.nmf_patch, config.nmf_overlap)?;
    let sketches: Vec<GrayImage> = training.iter().map(|p| p.sketch.clone()).collect();
    train_dictionaries(&sketches, &grid, config.rank, &config.nmf_params())
}
