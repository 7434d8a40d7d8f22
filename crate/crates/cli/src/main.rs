use std::path::PathBuf;
use std::process::ExitCode;

use balloonseg::{run_dsc, run_phantom, run_segment, SegmentArgs};
use clap::{Parser, Subcommand};

/// Balloon-inflation segmentation of star-shaped objects in 3D volumes.
#[derive(Parser)]
#[command(name = "balloonseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a volume from a contour drawn on one slice.
    Segment {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        contour: PathBuf,
        /// Inflation parameters as a flat JSON object; omitted fields take defaults.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out_mask: PathBuf,
        /// Surface mesh; the format follows the extension (.obj or .stl).
        #[arg(long)]
        out_mesh: Option<PathBuf>,
        #[arg(long)]
        out_stats: Option<PathBuf>,
    },
    /// Print DSC and volumes of an automatic mask against a reference, as CSV.
    Dsc { mask_a: PathBuf, mask_r: PathBuf },
    /// Generate a synthetic volume, its ground-truth mask and a suggested contour.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        /// Writes <prefix>.mha, <prefix>_truth.mha and <prefix>_contour.json.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Serve the HTTP API over a directory of .mha/.mhd volumes.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        volume_dir: PathBuf,
    },
}

fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Segment { volume, contour, params, out_mask, out_mesh, out_stats } => {
            let args = SegmentArgs { volume, contour, params, out_mask, out_mesh, out_stats };
            let stats = run_segment(&args).map_err(|e| e.to_string())?;
            log::info!(
                "{} iterations ({:?}), {:.3} cm³ in {:.3} s",
                stats.iterations_run,
                stats.termination_reason,
                stats.volume_cm3,
                stats.wall_time
            );
        }
        Command::Dsc { mask_a, mask_r } => print!("{}", run_dsc(&mask_a, &mask_r).map_err(|e| e.to_string())?),
        Command::Phantom { spec, out_prefix } => {
            let files = run_phantom(&spec, &out_prefix).map_err(|e| e.to_string())?;
            log::info!("wrote {}, {}, {}", files.volume.display(), files.truth.display(), files.contour.display());
        }
        Command::Serve { port, volume_dir } => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime.block_on(balloonseg::service::serve(port, volume_dir)).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
