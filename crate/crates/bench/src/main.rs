use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use causalstrat_bench::acceptance;
use causalstrat_bench::config::{example_config, ExperimentConfig, ExperimentId};
use causalstrat_bench::experiments;
use causalstrat_bench::svg::{emit_svg_plot, PlotSpec};
use causalstrat_bench::table::CsvTable;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "causalstrat", version, about = "Strategic classification experiments under a confounded causal model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML file overriding the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides `[run].seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `[run].out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Skip SVG plots.
    #[arg(long)]
    no_svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Best post-adaptation rule per budget.
    OptimalWeights(RunArgs),
    /// Train/test budget matrix for the causal and all-features families.
    RobustnessMatrix(RunArgs),
    /// Agent utility change between static and adaptive institution rules.
    AlignmentHeatmap(RunArgs),
    /// Post-adaptation CE advantage of the causal fit over budget and window.
    MaxgapHeatmap(RunArgs),
    /// CE decomposition over budgets for two cost profiles.
    CostSweep(RunArgs),
    /// Budget sweep of the uniform example with the crossing estimate.
    PhaseTransition(RunArgs),
    /// Run the acceptance suite.
    Verify {
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print annotated default configuration.
    ExampleConfig {
        #[arg(value_enum, default_value = "optimal-weights")]
        experiment: ExperimentId,
    },
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    Ok(())
}

fn load(id: ExperimentId, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p, id)?,
        None => ExperimentConfig::preset(id),
    };
    if cfg.run.id != id {
        anyhow::bail!("config is for `{}` but `{}` was requested", cfg.run.id.name(), id.name());
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.run.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Output<'a> {
    dir: &'a Path,
    svg: bool,
}

impl Output<'_> {
    fn table(&self, name: &str, t: &CsvTable, plots: &[PlotSpec]) -> Result<()> {
        let path = self.dir.join(format!("{name}.csv"));
        t.write(&path)?;
        println!("wrote {}", path.display());
        if self.svg {
            for (i, p) in plots.iter().enumerate() {
                let suffix = if plots.len() > 1 { format!("_{i}") } else { String::new() };
                let path = self.dir.join(format!("{name}{suffix}.svg"));
                std::fs::write(&path, emit_svg_plot(t, p)?)?;
                println!("wrote {}", path.display());
            }
        }
        Ok(())
    }
}

fn line(title: &str, x: &str, y: &[&str], group: Option<&str>) -> PlotSpec {
    PlotSpec::Line { title: title.into(), x: x.into(), y: y.iter().map(|s| s.to_string()).collect(), group: group.map(Into::into) }
}

fn heat(title: &str, x: &str, y: &str, v: &str) -> PlotSpec {
    PlotSpec::Heatmap { title: title.into(), x: x.into(), y: y.into(), value: v.into() }
}

fn split(t: &CsvTable, col: &str, value: f64) -> Result<CsvTable> {
    let mut out = CsvTable::new(t.header.clone());
    for r in t.filter(col, value)? {
        out.push(r.clone());
    }
    out.provenance = t.provenance.clone();
    Ok(out)
}

fn run(id: ExperimentId, args: &RunArgs) -> Result<()> {
    init_threads(args.threads)?;
    let cfg = load(id, args)?;
    std::fs::create_dir_all(&cfg.run.out).with_context(|| format!("creating {}", cfg.run.out.display()))?;
    let name = id.name();
    let hash = cfg.hash();
    std::fs::write(cfg.run.out.join(format!("{name}.config.toml")), cfg.to_toml())?;
    std::fs::write(cfg.run.out.join(format!("{name}.sha256")), format!("{hash}\n"))?;
    println!("{name}: config sha256 {hash}, seed {}", cfg.run.seed);
    let out = Output { dir: &cfg.run.out, svg: !args.no_svg };
    match id {
        ExperimentId::OptimalWeights => {
            let t = experiments::run_optimal_weights(&cfg)?;
            out.table(name, &t, &[line("Best spurious weight", "delta", &["mean_abs_a"], None)])?;
        }
        ExperimentId::RobustnessMatrix => {
            let t = experiments::run_robustness_matrix(&cfg)?;
            out.table(name, &t, &[])?;
            for (code, fam) in [(0.0, "causal"), (1.0, "all")] {
                let sub = split(&t, "family", code)?;
                out.table(&format!("{name}_{fam}"), &sub, &[heat(&format!("Loss, {fam} family"), "delta_train", "delta_test", "loss")])?;
            }
        }
        ExperimentId::AlignmentHeatmap => {
            let t = experiments::run_alignment_heatmap(&cfg)?;
            out.table(
                name,
                &t,
                &[
                    heat("E[r_p] under h_pre", "delta2", "epsilon", "rp_pre"),
                    heat("E[r_p] under h_post", "delta2", "epsilon", "rp_post"),
                    heat("Agent utility change", "delta2", "epsilon", "delta_rp"),
                ],
            )?;
        }
        ExperimentId::MaxgapHeatmap => {
            let t = experiments::run_maxgap_heatmap(&cfg)?;
            out.table(name, &t, &[heat("CE(all features) - CE(causal)", "delta", "window", "ce_diff")])?;
        }
        ExperimentId::CostSweep => {
            let t = experiments::run_cost_sweep_decomposition(&cfg)?;
            out.table(name, &t, &[])?;
            for (k, (ms, mc)) in cfg.sweep.mu_s.iter().zip(&cfg.sweep.mu_c).enumerate() {
                let sub = split(&t, "mu_s", *ms)?;
                let sub = split(&sub, "mu_c", *mc)?;
                out.table(
                    &format!("{name}_{k}"),
                    &sub,
                    &[line(&format!("mu_s={ms}, mu_c={mc}"), "delta", &["incomplete", "transfer", "total"], Some("family"))],
                )?;
            }
        }
        ExperimentId::PhaseTransition => {
            let p = experiments::run_phase_transition(&cfg)?;
            out.table(name, &p.table, &[line("Best rule", "delta", &["best_a", "best_b", "a_spur", "b_spur"], None)])?;
            out.table(&format!("{name}_curve"), &p.curve, &[line("Post-adaptation loss", "delta", &["loss_spur", "loss_causal"], None)])?;
            match p.crossing {
                Some(c) => println!("crossing at delta = {c:.4}"),
                None => println!("no crossing in the swept range"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::OptimalWeights(a) => run(ExperimentId::OptimalWeights, a),
        Command::RobustnessMatrix(a) => run(ExperimentId::RobustnessMatrix, a),
        Command::AlignmentHeatmap(a) => run(ExperimentId::AlignmentHeatmap, a),
        Command::MaxgapHeatmap(a) => run(ExperimentId::MaxgapHeatmap, a),
        Command::CostSweep(a) => run(ExperimentId::CostSweep, a),
        Command::PhaseTransition(a) => run(ExperimentId::PhaseTransition, a),
        Command::Verify { threads } => {
            return match init_threads(*threads) {
                Ok(()) => {
                    if acceptance::report(&acceptance::run_all()) {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            };
        }
        Command::ExampleConfig { experiment } => {
            print!("{}", example_config(*experiment));
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
