//! File-based subcommands. Every failure becomes a [`CliError`] whose message
//! names the offending file and, for JSON, the line and key.

use std::fs;
use std::path::{Path, PathBuf};

use balloonseg_core::evaluation::report_csv;
use balloonseg_core::{
    compare, load_metaimage, save_mask, save_volume, segment, BinaryMask, ElementType, EvalError, ImageVolume,
    InflationError, InflationParams, InitContour, MetaImageError, PhantomError, PhantomSpec, SegStats,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: MetaImageError },
    #[error("{path}: {source}")]
    Phantom { path: PathBuf, source: PhantomError },
    #[error("{path}: unsupported mesh format, expected .obj or .stl")]
    MeshFormat { path: PathBuf },
    #[error("segmentation failed: {0}")]
    Inflation(#[from] InflationError),
    #[error("{0}")]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "stl" => Some(Self::Stl),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "obj" => Some(Self::Obj),
            "stl" => Some(Self::Stl),
            _ => None,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Write { path: path.into(), source })
}

fn read_json<T>(path: &Path, parse: impl FnOnce(&str) -> serde_json::Result<T>) -> Result<T> {
    parse(&read_text(path)?).map_err(|source| CliError::Json { path: path.into(), source })
}

pub fn load_volume(path: &Path) -> Result<ImageVolume> {
    load_metaimage(path).map_err(|source| CliError::Image { path: path.into(), source })
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    Ok(BinaryMask::from_volume(&load_volume(path)?))
}

fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    save_mask(mask, path).map_err(|source| CliError::Image { path: path.into(), source })
}

#[derive(Debug, Clone)]
pub struct SegmentArgs {
    pub volume: PathBuf,
    pub contour: PathBuf,
    pub params: Option<PathBuf>,
    pub out_mask: PathBuf,
    pub out_mesh: Option<PathBuf>,
    pub out_stats: Option<PathBuf>,
}

/// Reads every input, segments, and writes the requested outputs.
pub fn run_segment(args: &SegmentArgs) -> Result<SegStats> {
    let mesh_format = match &args.out_mesh {
        Some(path) => Some(MeshFormat::from_path(path).ok_or_else(|| CliError::MeshFormat { path: path.clone() })?),
        None => None,
    };
    let volume = load_volume(&args.volume)?;
    let contour = read_json(&args.contour, InitContour::from_json)?;
    let params = match &args.params {
        Some(path) => read_json(path, InflationParams::from_json)?,
        None => InflationParams::default(),
    };
    let (seed, result) = segment(&volume, &contour, &params)?;
    log::info!(
        "seed center {:?}, range [{}, {}], radius {:.2} mm",
        seed.center,
        seed.intensity_min,
        seed.intensity_max,
        seed.radius
    );

    write_mask(&result.mask, &args.out_mask)?;
    if let (Some(path), Some(format)) = (&args.out_mesh, mesh_format) {
        let bytes = match format {
            MeshFormat::Obj => result.mesh.to_obj().into_bytes(),
            MeshFormat::Stl => result.mesh.to_stl(),
        };
        write_bytes(path, &bytes)?;
    }
    if let Some(path) = &args.out_stats {
        let text = serde_json::to_string_pretty(&result.stats).expect("stats serialize");
        write_bytes(path, text.as_bytes())?;
    }
    Ok(result.stats)
}

/// CSV header plus one row comparing `auto` against `reference`.
pub fn run_dsc(auto: &Path, reference: &Path) -> Result<String> {
    let a = load_mask(auto)?;
    let r = load_mask(reference)?;
    let report = compare(&a, &r)?;
    let id = auto.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(report_csv(&id, &report))
}

/// Output files written by [`run_phantom`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhantomFiles {
    pub volume: PathBuf,
    pub truth: PathBuf,
    pub contour: PathBuf,
}

impl PhantomFiles {
    pub fn for_prefix(prefix: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self { volume: with(".mha"), truth: with("_truth.mha"), contour: with("_contour.json") }
    }
}

pub fn run_phantom(spec_path: &Path, out_prefix: &Path) -> Result<PhantomFiles> {
    let spec = read_json(spec_path, PhantomSpec::from_json)?;
    let phantom = spec.generate().map_err(|source| CliError::Phantom { path: spec_path.into(), source })?;
    let files = PhantomFiles::for_prefix(out_prefix);
    save_volume(&phantom.volume, &files.volume, ElementType::Float)
        .map_err(|source| CliError::Image { path: files.volume.clone(), source })?;
    write_mask(&phantom.truth, &files.truth)?;
    write_bytes(&files.contour, phantom.contour.to_json().as_bytes())?;
    Ok(files)
}
