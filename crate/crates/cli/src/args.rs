use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(version, about = "Compress image collections into jointly trained sine networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a bundle for a set of equally sized images
    Compress(CompressArgs),
    /// Render images from a bundle
    Decompress(DecompressArgs),
    /// Compare a bundle against its originals
    Metrics(MetricsArgs),
    /// Rate-distortion sweep over image counts or architectures
    Sweep(SweepArgs),
    /// Check the convergence bounds on a quadratic configuration
    VerifyBounds(VerifyArgs),
    /// Run one of the weight-averaging demonstrations
    Demo(DemoArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerArg {
    Adam,
    PlainGd,
}

/// Parsed `l=<layers>,n=<neurons>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchArg {
    pub l: usize,
    pub n: usize,
}

pub fn parse_arch(s: &str) -> Result<ArchArg, String> {
    let mut l = None;
    let mut n = None;
    for part in s.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected l=<layers>,n=<neurons>, got {s:?}"))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|_| format!("not a positive integer: {value:?}"))?;
        match key.trim() {
            "l" => l = Some(value),
            "n" => n = Some(value),
            other => return Err(format!("unknown architecture key {other:?}")),
        }
    }
    match (l, n) {
        (Some(l), Some(n)) if l >= 1 && n >= 1 => Ok(ArchArg { l, n }),
        _ => Err(format!(
            "expected l=<layers>,n=<neurons> with both at least 1, got {s:?}"
        )),
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainingArgs {
    #[arg(long, value_parser = parse_arch, default_value = "l=4,n=64")]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 5000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start every weight set from the same initialization
    #[arg(long)]
    pub identical_init: bool,
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub images: Vec<PathBuf>,
    #[command(flatten)]
    pub train: TrainingArgs,
    #[arg(long, default_value_t = 2)]
    pub n_weights: usize,
    /// `default` or a CSV file with M rows of N coefficients
    #[arg(long, default_value = "default")]
    pub combiner: String,
    /// `uniform` or a file with M loss weights, one per line
    #[arg(long, default_value = "uniform")]
    pub gamma: String,
    /// Bundle path; history and metadata are written next to it
    #[arg(long)]
    pub out: PathBuf,
    /// Rotate portrait images to landscape before training
    #[arg(long)]
    pub rotate_portrait: bool,
    /// Train on 2x box-downsampled copies
    #[arg(long)]
    pub downsample: bool,
}

#[derive(Args, Debug)]
pub struct DecompressArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// 1-based image index
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    pub index: Option<usize>,
    /// Render every image into the `--out` directory
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Output PNG, or a directory with `--all`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Originals in bundle order; without them only header figures are reported
    #[arg(long, num_args = 1..)]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long)]
    pub rotate_portrait: bool,
    /// JSON report path; printed to stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepModeArg {
    VaryM,
    VaryArch,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Directory of PNG images, taken in file-name order
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, value_enum)]
    pub mode: SweepModeArg,
    /// Images per bundle for vary-m, e.g. `3,6`
    #[arg(long, value_delimiter = ',')]
    pub m_values: Vec<usize>,
    /// Architectures for vary-arch, e.g. `--archs l=2,n=294 --archs l=4,n=170`
    #[arg(long, value_parser = parse_arch)]
    pub archs: Vec<ArchArg>,
    /// Fixed images per bundle for vary-arch; defaults to all images
    #[arg(long)]
    pub group_size: Option<usize>,
    #[command(flatten)]
    pub train: TrainingArgs,
    #[arg(long, default_value_t = 2)]
    pub n_weights: usize,
    #[arg(long)]
    pub rotate_portrait: bool,
    /// Only compute sizes and rates, skip training
    #[arg(long)]
    pub plan_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// JSON configuration
    pub config: PathBuf,
    /// Full JSON report
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoModeArg {
    NaiveAverage,
    ConstrainedAverage,
    DifferentThird,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(value_enum)]
    pub mode: DemoModeArg,
    /// Replacements for the built-in images: two glyphs, plus a third for different-third
    #[arg(long, num_args = 1..)]
    pub images: Vec<PathBuf>,
    /// Side of the built-in images
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, value_parser = parse_arch, default_value = "l=4,n=64")]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory for PNGs and the PSNR table
    #[arg(long)]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn arch_parsing() {
        assert_eq!(parse_arch("l=8,n=112"), Ok(ArchArg { l: 8, n: 112 }));
        assert_eq!(parse_arch("n=3, l=2"), Ok(ArchArg { l: 2, n: 3 }));
        assert!(parse_arch("l=0,n=4").is_err());
        assert!(parse_arch("l=2").is_err());
        assert!(parse_arch("depth=2,n=4").is_err());
        assert!(parse_arch("l=x,n=4").is_err());
    }
}
