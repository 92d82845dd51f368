use circledet_cli::check::{self, Suite};
use circledet_cli::forward::{self, ForwardOpts};
use circledet_cli::gen;
use circledet_cli::optimize::{self, LossKind, OptimizeOpts};
use circledet_cli::{exit_code_for, run_eval, EXIT_CHECK_FAILED};
use circledet_core::attention::{AttentionVariant, CdaInit};
use circledet_core::error::Error;
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "circledet",
    about = "Circle detection kernels: scene generation, oracle checks, optimization demos and AP evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Geom,
    Match,
    Attn,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Gciou,
    Ciou,
    L1,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Dense,
    Deformable,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    #[value(name = "cda-r")]
    CdaR,
    #[value(name = "cda-c")]
    CdaC,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes: annotations, masks and feature grids.
    Gen {
        /// JSON file with the generation config (GenConfig fields).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle verification suites.
    Check {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scales the per-check sample counts.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Inject a sign flip into the first geometry check (self-test).
        #[arg(long, default_value_t = false)]
        sabotage: bool,
    },
    /// Gradient descent on prediction circles through Hungarian matching.
    Optimize {
        #[arg(long, value_enum)]
        loss: LossArg,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Annotation file of the scene to fit.
        #[arg(long)]
        scene: PathBuf,
        /// Report JSON output path.
        #[arg(long)]
        out: PathBuf,
        /// Side of the initial prediction grid (side^2 predictions).
        #[arg(long, default_value_t = 5)]
        pred_grid: usize,
        /// Optional JSON file with loss weights (LossConfig fields).
        #[arg(long)]
        loss_config: Option<PathBuf>,
    },
    /// Run the circle-query decoder over a feature grid.
    Forward {
        /// Weight bundle path; created with seeded weights when missing.
        #[arg(long)]
        weights: PathBuf,
        /// Feature grid (.fgrid) of the scene.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 6)]
        layers: usize,
        #[arg(long, value_enum, default_value = "deformable")]
        variant: VariantArg,
        #[arg(long, value_enum, default_value = "cda-c")]
        init: InitArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        queries: usize,
        /// Report JSON output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate predictions against ground truth and emit the AP report.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = gen::load_config(&config)?;
            let summary = gen::run_gen(&cfg, &out)?;
            println!(
                "generated {} scene(s), {} circles -> {}",
                summary.scenes,
                summary.total_circles,
                out.display()
            );
            Ok(0)
        }
        Command::Check { suite, seed, trials, sabotage } => {
            let suite = match suite {
                SuiteArg::Geom => Suite::Geom,
                SuiteArg::Match => Suite::Match,
                SuiteArg::Attn => Suite::Attn,
                SuiteArg::All => Suite::All,
            };
            let report = check::run_checks(suite, seed, trials, sabotage)?;
            for c in &report.checks {
                println!(
                    "[{}] {:<36} measured {:>12.6e}  limit {:>9.3e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.limit
                );
            }
            if report.all_pass() {
                println!("all {} checks passed", report.checks.len());
                Ok(0)
            } else {
                println!(
                    "{} of {} checks failed",
                    report.checks.iter().filter(|c| !c.pass).count(),
                    report.checks.len()
                );
                Ok(EXIT_CHECK_FAILED)
            }
        }
        Command::Optimize { loss, steps, lr, scene, out, pred_grid, loss_config } => {
            let cfg = match &loss_config {
                Some(path) => optimize::load_loss_config(path)?,
                None => Default::default(),
            };
            let opts = OptimizeOpts {
                loss: match loss {
                    LossArg::Gciou => LossKind::Gciou,
                    LossArg::Ciou => LossKind::Ciou,
                    LossArg::L1 => LossKind::L1,
                },
                steps,
                lr,
                pred_grid,
                cfg,
                ..OptimizeOpts::default()
            };
            let report = optimize::run_optimize(&scene, &out, &opts)?;
            println!(
                "loss {} after {} steps: final loss {:.6}, mean matched cIoU {:.4}",
                report.loss_kind, steps, report.final_loss, report.final_mean_ciou
            );
            Ok(0)
        }
        Command::Forward { weights, scene, layers, variant, init, seed, queries, out } => {
            let opts = ForwardOpts {
                layers,
                variant: match variant {
                    VariantArg::Dense => AttentionVariant::Dense,
                    VariantArg::Deformable => AttentionVariant::Deformable,
                },
                init: match init {
                    InitArg::CdaR => CdaInit::Random,
                    InitArg::CdaC => CdaInit::Sunflower,
                },
                seed,
                queries,
                ..ForwardOpts::default()
            };
            let report = forward::run_forward(&weights, &scene, &out, &opts)?;
            println!(
                "forward ({} variant): {} layers, {} detections -> {}",
                report.variant,
                report.layer_anchors.len() - 1,
                report.detections.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Eval { pred, gt, out } => {
            let report = run_eval(&pred, &gt, &out)?;
            println!(
                "AP {:.4}  AP50 {:.4}  AP75 {:.4}  AP_S {:.4}  AP_M {:.4}",
                report.ap, report.ap50, report.ap75, report.ap_s, report.ap_m
            );
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
