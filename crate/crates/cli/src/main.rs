use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use entbank_core::pipeline::{
    bank_after_path, bank_before_path, compute_metrics, read_run_config, read_script, read_shots,
    run_story, shot_dir, write_cost_summary, write_metrics, write_run_dir, write_run_header,
    write_shot, Engine, LoadedConfig, Reference, ShotView, SCRIPT_FILE,
};
use entbank_core::tensor::{read_mask, read_tensor};
use entbank_core::{validate_script, CostReport, EntityBank, Frame, StoryScript};

#[derive(Parser)]
#[command(
    name = "entbank",
    version,
    about = "Entity-bank multi-shot story pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a story script.
    ValidateScript { file: PathBuf },
    /// Build the initial bank from the configured references.
    InitBank {
        #[arg(long)]
        config: PathBuf,
        /// Run directory to create.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Run one shot against the bank left by the previous shot.
    Step {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        shot: u32,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Run every shot and write the full run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Update the bank after every n-th shot; 0 disables updates.
        #[arg(long)]
        update_every: Option<usize>,
        /// Replace an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// Recompute consistency metrics from a run directory.
    Metrics {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Rebuild the cost summary from a run directory and print it.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

struct Inputs {
    loaded: LoadedConfig,
    script: StoryScript,
}

fn load_inputs(config: &Path) -> Result<Inputs> {
    let loaded =
        LoadedConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let script_path = loaded.resolve(&loaded.config.script);
    let script =
        read_script(&script_path).with_context(|| format!("loading {}", script_path.display()))?;
    let diagnostics = validate_script(&script);
    if !diagnostics.is_empty() {
        bail!(
            "script {} is invalid:\n  {}",
            script_path.display(),
            diagnostics.join("\n  ")
        );
    }
    Ok(Inputs { loaded, script })
}

fn load_references(loaded: &LoadedConfig) -> Result<Vec<Reference>> {
    loaded
        .config
        .references
        .iter()
        .map(|r| {
            let frame_path = loaded.resolve(&r.frame);
            let mask_path = loaded.resolve(&r.mask);
            let frame = Frame::try_from(read_tensor(&frame_path)?)
                .with_context(|| format!("reference frame {}", frame_path.display()))?;
            let mask = read_mask(&mask_path)
                .with_context(|| format!("reference mask {}", mask_path.display()))?;
            Ok(Reference {
                frame,
                mask,
                entity: r.entity.clone(),
            })
        })
        .collect()
}

fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        if !force {
            bail!(
                "{} exists and is not empty (use --force to replace it)",
                out.display()
            );
        }
        fs::remove_dir_all(out).with_context(|| format!("removing {}", out.display()))?;
    }
    Ok(())
}

fn print_cost(label: &str, c: &CostReport) {
    println!(
        "{label:>9}  tokens {:>6}/{:<6} reduction {:>7.3}%  ops ratio {:.3}",
        c.tokens_kept,
        c.tokens_full,
        100.0 * c.reduction,
        c.ops_ratio()
    );
}

fn validate_cmd(file: &Path) -> Result<ExitCode> {
    let script = read_script(file)?;
    let diagnostics = validate_script(&script);
    for d in &diagnostics {
        println!("{d}");
    }
    if diagnostics.is_empty() {
        println!("ok: {} shots", script.shots.len());
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn init_bank_cmd(config: &Path, out: &Path) -> Result<()> {
    let inputs = load_inputs(config)?;
    let engine = Engine::new(inputs.loaded.config.clone())?;
    let bank = engine.initial_bank(&inputs.script, &load_references(&inputs.loaded)?)?;
    write_run_header(out, &inputs.script, &inputs.loaded.config, &bank)?;
    println!(
        "bank: {} entities, {} entries",
        bank.entity_ids().count(),
        bank.total_entries()
    );
    Ok(())
}

fn step_cmd(config: &Path, shot: u32, out: &Path) -> Result<()> {
    let inputs = load_inputs(config)?;
    let position = inputs
        .script
        .shots
        .iter()
        .position(|s| s.shot_num == shot)
        .with_context(|| format!("script has no shot {shot}"))?;
    let before = bank_before_path(out, shot);
    let mut bank = EntityBank::load(&before).with_context(|| {
        format!(
            "loading {} (run init-bank and earlier steps first)",
            before.display()
        )
    })?;
    let engine = Engine::new(inputs.loaded.config.clone())?;
    let result = engine.run_shot(&inputs.script, &mut bank, position)?;
    write_shot(out, &result)?;
    print_cost(&format!("shot {shot}"), &result.cost);
    println!(
        "wrote {} and {}",
        shot_dir(out, shot).display(),
        bank_after_path(out, shot).display()
    );
    Ok(())
}

fn run_cmd(config: &Path, out: &Path, update_every: Option<usize>, force: bool) -> Result<()> {
    let mut inputs = load_inputs(config)?;
    if let Some(n) = update_every {
        inputs.loaded.config.update_every = n;
    }
    let references = load_references(&inputs.loaded)?;
    prepare_out(out, force)?;
    let outcome = run_story(&inputs.script, &inputs.loaded.config, &references)?;
    write_run_dir(out, &inputs.script, &inputs.loaded.config, &outcome)?;
    for s in &outcome.shots {
        print_cost(&format!("shot {}", s.shot_num), &s.cost);
    }
    print_cost("total", &outcome.aggregate);
    print!("{}", outcome.metrics.to_text());
    Ok(())
}

fn metrics_cmd(run_dir: &Path) -> Result<()> {
    let config = read_run_config(run_dir)?;
    let script = read_script(&run_dir.join(SCRIPT_FILE))?;
    let shots = read_shots(run_dir)?;
    let views: Vec<ShotView<'_>> = shots
        .iter()
        .map(|s| ShotView {
            shot_num: s.shot_num,
            frames: &s.frames,
            masks: &s.masks,
        })
        .collect();
    let engine = Engine::new(config.clone())?;
    let report = compute_metrics(&script, &views, engine.provider(), &config)?;
    write_metrics(run_dir, &report)?;
    print!("{}", report.to_text());
    Ok(())
}

fn report_cmd(run_dir: &Path) -> Result<()> {
    let shots = read_shots(run_dir)?;
    let costs: Vec<(u32, CostReport)> = shots.iter().map(|s| (s.shot_num, s.cost)).collect();
    write_cost_summary(run_dir, &costs)?;
    for (n, c) in &costs {
        print_cost(&format!("shot {n}"), c);
    }
    let all: Vec<CostReport> = costs.iter().map(|(_, c)| *c).collect();
    print_cost("total", &CostReport::aggregate(&all));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ValidateScript { file } => validate_cmd(file),
        Command::InitBank { config, out } => init_bank_cmd(config, out).map(|_| ExitCode::SUCCESS),
        Command::Step { config, shot, out } => {
            step_cmd(config, *shot, out).map(|_| ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            out,
            update_every,
            force,
        } => run_cmd(config, out, *update_every, *force).map(|_| ExitCode::SUCCESS),
        Command::Metrics { run_dir } => metrics_cmd(run_dir).map(|_| ExitCode::SUCCESS),
        Command::Report { run_dir } => report_cmd(run_dir).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
