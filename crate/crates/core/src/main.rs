//! Command-line interface: blind deblurring, the numerical experiments,
//! evaluation metrics and a proximal-operator demo.

use clap::{Args, Parser, Subcommand};
use lrdeblur::analysis::{
    cost_ratio_curve, default_signal_row, experiment_1d_blind, experiment_noise_amplification,
    experiment_perturbed_pseudoinverse, experiment_toeplitz_rank, experiment_toeplitz_rank_gf2,
    logdet_vs_size_curve, marginalize_kernel, HyperLaplacianSampler, Regularizer,
};
use lrdeblur::io::{
    load_config, load_image, load_kernel, save_image, save_kernel, save_kernel_png, save_report,
};
use lrdeblur::kstep::{prox_logdet, svd_triple};
use lrdeblur::metrics::{
    error_ratio, psnr, ssd_kernel_aligned, ssd_kernel_raw, DEFAULT_SUCCESS_THRESHOLD,
};
use lrdeblur::nonblind::HQParams;
use lrdeblur::pipeline::{deblur_blind, deblur_single_scale};
use lrdeblur::{default_config, DeblurConfig, Error, Kernel, Result};
use nalgebra::DMatrix;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lrdeblur",
    about = "Blind deconvolution with low-rank kernel regularization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the blur kernel and restore a sharp image.
    Deblur(DeblurArgs),
    /// Run a numerical experiment and write its CSV report.
    Simulate(SimulateArgs),
    /// Score a restoration against ground truth.
    Eval(EvalArgs),
    /// Print the log-det proximal shrinkage on example matrices.
    ProxDemo,
}

#[derive(Args)]
struct DeblurArgs {
    /// Blurry input image (PGM or PNG).
    input: PathBuf,
    /// Declared kernel size L (frame is L x L, odd).
    #[arg(long)]
    kernel_size: Option<usize>,
    /// Config file of `key = value` lines; missing keys keep defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Set sigma = 0, skipping the low-rank prox sub-step.
    #[arg(long)]
    sigma0: bool,
    /// Skip the multi-scale pyramid and solve at full resolution only.
    #[arg(long)]
    single_scale: bool,
    /// Disable the per-level kernel threshold.
    #[arg(long)]
    no_threshold: bool,
    /// Restored image output (default: <input stem>_deblurred.png).
    #[arg(long)]
    out_image: Option<PathBuf>,
    /// Kernel text output (default: <input stem>_kernel.txt).
    #[arg(long)]
    out_kernel: Option<PathBuf>,
    /// Optional max-scaled PNG visualization of the kernel.
    #[arg(long)]
    out_kernel_png: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(subcommand)]
    experiment: Experiment,
}

#[derive(Subcommand)]
enum Experiment {
    /// Pseudo-inverse noise amplification versus declared kernel size.
    Amplification {
        /// Signal length of the synthetic piecewise-smooth row.
        #[arg(long, default_value_t = 64)]
        m: usize,
        /// Extract the signal from a row of this image instead.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Row index used with --image.
        #[arg(long, default_value_t = 0)]
        row: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![3, 7, 11, 15, 19, 23, 27, 31])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectral growth of the perturbed pseudo-inverse error operator.
    Perturbed {
        #[arg(long, default_value_t = 254)]
        m: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![5, 9, 13, 17, 21])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0.01)]
        rel_noise: f64,
        #[arg(long, default_value_t = 10.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo full-rank frequency of square Toeplitz operators.
    Rank {
        #[arg(long, default_value_t = 21)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Use the GF(2) finite-field analog instead of real signals.
        #[arg(long)]
        gf2: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regularizer cost ratios under kernel/noise mixing.
    CostRatio {
        /// Truth kernel file; default is a 7x7 Gaussian.
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.05, 0.1, 0.15, 0.2])]
        epsilons: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-det cost versus frame size for noise, padded truth and PSF.
    LogdetSize {
        /// Truth kernel file; default is a 7x7 Gaussian.
        #[arg(long)]
        kernel: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![7, 15, 23, 31, 39, 47])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// 1-D blind-deconvolution side-lobe study over declared sizes.
    Blind1d {
        #[arg(long, default_value_t = 96)]
        m: usize,
        /// Truth kernel length (odd); marginalized from a 2-D Gaussian.
        #[arg(long, default_value_t = 5)]
        truth_size: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![5, 13, 21])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 49)]
        iters: usize,
        /// Set sigma = 0 (no low-rank regularization).
        #[arg(long)]
        sigma0: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Restored image under test.
    #[arg(long)]
    est: PathBuf,
    /// Sharp ground-truth image.
    #[arg(long)]
    gt: PathBuf,
    /// Blurry observation.
    #[arg(long)]
    blurry: PathBuf,
    /// Ground-truth kernel file.
    #[arg(long)]
    gt_kernel: PathBuf,
    /// Estimated kernel file for the SSD scores.
    #[arg(long)]
    est_kernel: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SUCCESS_THRESHOLD)]
    threshold: f64,
}

fn with_suffix(input: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    input.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn run_deblur(a: DeblurArgs) -> Result<()> {
    let mut cfg: DeblurConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => default_config(),
    };
    if let Some(l) = a.kernel_size {
        cfg.kernel_size = (l, l);
    }
    if a.sigma0 {
        cfg.sigma = 0.0;
    }
    if a.no_threshold {
        cfg.threshold_ratio = 0.0;
    }
    let y = load_image(&a.input)?;
    let result = if a.single_scale {
        deblur_single_scale(&y, &cfg)?
    } else {
        deblur_blind(&y, &cfg)?
    };
    let out_image = a.out_image.unwrap_or_else(|| with_suffix(&a.input, "_deblurred", "png"));
    let out_kernel = a.out_kernel.unwrap_or_else(|| with_suffix(&a.input, "_kernel", "txt"));
    save_image(&out_image, &result.image)?;
    save_kernel(&out_kernel, &result.kernel)?;
    if let Some(p) = &a.out_kernel_png {
        save_kernel_png(p, &result.kernel)?;
    }
    println!("wrote {} and {}", out_image.display(), out_kernel.display());
    Ok(())
}

fn default_truth_kernel() -> Kernel {
    Kernel::gaussian(7, 7, 1.0).expect("default kernel is valid")
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let (report, out) = match a.experiment {
        Experiment::Amplification { m, image, row, sizes, trials, seed, out } => {
            let signal = match image {
                Some(p) => {
                    let img = load_image(&p)?;
                    if row >= img.height() {
                        return Err(Error::InvalidArgument(format!(
                            "row {row} out of range for {} rows",
                            img.height()
                        )));
                    }
                    (0..img.width()).map(|j| img.get(row, j)).collect()
                }
                None => default_signal_row(m),
            };
            (experiment_noise_amplification(&signal, &sizes, trials, seed)?, out)
        }
        Experiment::Perturbed { m, sizes, trials, rel_noise, gamma, alpha, seed, out } => {
            let sampler = HyperLaplacianSampler::new(gamma, alpha, seed)?;
            (experiment_perturbed_pseudoinverse(m, &sizes, trials, &sampler, rel_noise)?, out)
        }
        Experiment::Rank { m, trials, gf2, seed, out } => {
            let report = if gf2 {
                experiment_toeplitz_rank_gf2(m, trials, seed)?
            } else {
                experiment_toeplitz_rank(m, trials, &HyperLaplacianSampler::standard(seed))?
            };
            (report, out)
        }
        Experiment::CostRatio { kernel, epsilons, trials, seed, out } => {
            let k = match kernel {
                Some(p) => load_kernel(&p, true)?,
                None => default_truth_kernel(),
            };
            (cost_ratio_curve(&k, &Regularizer::standard_set(), &epsilons, trials, seed)?, out)
        }
        Experiment::LogdetSize { kernel, sizes, delta, seed, out } => {
            let k = match kernel {
                Some(p) => load_kernel(&p, true)?,
                None => default_truth_kernel(),
            };
            (logdet_vs_size_curve(&k, &sizes, delta, seed)?, out)
        }
        Experiment::Blind1d { m, truth_size, sizes, iters, sigma0, seed, out } => {
            let truth = marginalize_kernel(&Kernel::gaussian(
                truth_size,
                truth_size,
                truth_size as f64 / 5.0,
            )?);
            let mut cfg = default_config();
            cfg.kernel_size = (1, truth_size);
            cfg.seed = seed;
            if sigma0 {
                cfg.sigma = 0.0;
            }
            let x = default_signal_row(m);
            (experiment_1d_blind(&x, truth.weights(), &sizes, iters, &cfg)?, out)
        }
    };
    save_report(&out, &report)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let est = load_image(&a.est)?;
    let gt = load_image(&a.gt)?;
    let blurry = load_image(&a.blurry)?;
    let k_gt = load_kernel(&a.gt_kernel, false)?;
    let err = error_ratio(&est, &gt, &blurry, &k_gt, &HQParams::default())?;
    let psnr_db = psnr(&est, &gt, 1.0)?;
    println!("err_ratio = {err}");
    println!("psnr_db = {psnr_db}");
    println!("success = {}", err <= a.threshold);
    if let Some(p) = &a.est_kernel {
        let k_est = load_kernel(p, false)?;
        println!("ssd_kernel_aligned = {}", ssd_kernel_aligned(&k_est, &k_gt)?);
        println!("ssd_kernel_raw = {}", ssd_kernel_raw(&k_est, &k_gt)?);
    }
    Ok(())
}

fn run_prox_demo() -> Result<()> {
    let examples: Vec<(&str, DMatrix<f64>, f64, f64)> = vec![
        (
            "diagonal",
            DMatrix::from_diagonal(&nalgebra::dvector![1.0, 0.5, 0.05]),
            0.05,
            0.01,
        ),
        (
            "gaussian kernel 5x5",
            Kernel::gaussian(5, 5, 1.0)?.to_matrix(),
            5e-5,
            0.01,
        ),
    ];
    for (name, m, tau, delta) in examples {
        let before = svd_triple(&m).s;
        let shrunk = prox_logdet(&m, &m, tau, delta)?;
        let after = svd_triple(&shrunk).s;
        println!("{name} (tau={tau}, delta={delta})");
        let fmt = |v: &nalgebra::DVector<f64>| {
            v.iter().map(|s| format!("{s:.6}")).collect::<Vec<_>>().join(" ")
        };
        println!("  singular values in : {}", fmt(&before));
        println!("  singular values out: {}", fmt(&after));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Deblur(a) => run_deblur(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Eval(a) => run_eval(a),
        Command::ProxDemo => run_prox_demo(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
