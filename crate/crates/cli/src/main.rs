use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bandit_tutor_core::experiment::{self, parse_groups, CurriculumSource, ExperimentPlan, Group};
use bandit_tutor_core::student::{fit_difficulties_from_responses, read_response_table};
use bandit_tutor_core::{plot, BktParamSet, Curriculum, SessionConfig};
use bandit_tutor_service::{AppState, FileStore, ServeOptions};

/// Overrides `--seed` when set.
const SEED_ENV: &str = "BANDIT_TUTOR_SEED";

#[derive(Parser, Debug)]
#[command(name = "bandit-tutor", version, about = "Hierarchical bandit tutoring engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate BKT students under the random, difficulty-agnostic and full policies.
    Simulate(SimulateArgs),
    /// Fit problem difficulties from a response table.
    DeriveDifficulty(DeriveArgs),
    /// Check a curriculum file against the schema and its invariants.
    Validate {
        #[arg(long)]
        curriculum: PathBuf,
    },
    /// Redraw the plot from a simulation output directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to `<in>/mastery.svg`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP tutoring service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Curriculum file, or `synthetic:SxCxP` (sections x concepts x problems).
    #[arg(long, default_value = "synthetic:5x3x10")]
    curriculum: String,
    #[arg(long, default_value_t = experiment::DEFAULT_STUDENTS_PER_GROUP)]
    students: usize,
    /// Comma-separated subset of random, agnostic, full.
    #[arg(long, default_value = "random,agnostic,full")]
    groups: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Enable the forgetting model for the bandit groups.
    #[arg(long)]
    mcm: bool,
    /// BKT parameters per concept (JSON). Synthetic parameters otherwise.
    #[arg(long)]
    bkt_params: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeriveArgs {
    /// CSV with columns problem_id, correct (0/1).
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write this curriculum with the fitted difficulties instead of a bare map.
    #[arg(long)]
    curriculum: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Curriculum file, or `synthetic:SxCxP`.
    #[arg(long)]
    curriculum: String,
    #[arg(long, default_value = "data/sessions")]
    data_dir: PathBuf,
    /// Built web client to serve under `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Enable the forgetting model for live sessions.
    #[arg(long)]
    mcm: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::DeriveDifficulty(args) => derive(args),
        Command::Validate { curriculum } => validate(&curriculum),
        Command::Plot { input, out } => replot(&input, out),
        Command::Serve(args) => serve(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn effective_seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        _ => Ok(flag),
    }
}

/// Curriculum and the id it is known by: the file stem, or the shape for
/// synthetic curricula.
fn load_curriculum(spec: &str, seed: u64) -> Result<(Curriculum, String)> {
    let source = CurriculumSource::parse(spec).map_err(anyhow::Error::msg)?;
    let id = match &source {
        CurriculumSource::File(path) => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "curriculum".into()),
        CurriculumSource::Synthetic {
            sections,
            concepts_per_section,
            problems_per_concept,
        } => format!("synthetic-{sections}x{concepts_per_section}x{problems_per_concept}"),
    };
    let curriculum = source
        .load(seed)
        .with_context(|| format!("loading curriculum `{spec}`"))?;
    Ok((curriculum, id))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let seed = effective_seed(args.seed)?;
    let groups = parse_groups(&args.groups).map_err(anyhow::Error::msg)?;
    let (curriculum, _) = load_curriculum(&args.curriculum, seed)?;
    let curriculum = Arc::new(curriculum);
    let mut plan = ExperimentPlan::new(curriculum.clone(), seed)
        .with_students(args.students)
        .with_groups(groups)
        .with_mcm(args.mcm);
    if let Some(path) = &args.bkt_params {
        plan.bkt = BktParamSet::from_file(path)
            .with_context(|| format!("reading BKT parameters {}", path.display()))?;
    }

    let result = experiment::run_experiment(&plan)?;
    experiment::emit(&result, &args.out)?;
    write(&args.out.join("curriculum.json"), &curriculum.to_json_pretty())?;
    write(&args.out.join("bkt_params.json"), &plan.bkt.to_json_pretty())?;

    println!(
        "{} students per group, seed {seed}, {} concepts, results in {}",
        plan.students_per_group,
        curriculum.concept_count(),
        args.out.display()
    );
    for g in Group::ALL {
        if let Some(final_mean) = result.final_mean(g) {
            let counts = result.question_counts(g);
            let mean_q = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
            println!(
                "  {:<9} final mean mastery {final_mean:.4}, mean questions {mean_q:.1}",
                g.name()
            );
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn derive(args: DeriveArgs) -> Result<()> {
    let records = read_response_table(&args.responses)
        .with_context(|| format!("reading {}", args.responses.display()))?;
    let difficulties = fit_difficulties_from_responses(&records)?;
    let text = match &args.curriculum {
        Some(path) => {
            let curriculum = Curriculum::from_file(path)
                .with_context(|| format!("loading {}", path.display()))?;
            curriculum.with_difficulties(&difficulties)?.to_json_pretty()
        }
        None => serde_json::to_string_pretty(&difficulties)?,
    };
    write(&args.out, &text)?;
    println!(
        "fitted {} problems from {} responses into {}",
        difficulties.len(),
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let curriculum =
        Curriculum::from_file(path).with_context(|| format!("invalid curriculum {}", path.display()))?;
    println!(
        "ok: {} sections, {} concepts, {} problems",
        curriculum.sections().len(),
        curriculum.concept_count(),
        curriculum.problem_count()
    );
    Ok(())
}

fn replot(input: &Path, out: Option<PathBuf>) -> Result<()> {
    let curves = experiment::load_curves(input)?;
    if curves.is_empty() {
        bail!("{} has no curves", input.display());
    }
    let out = out.unwrap_or_else(|| input.join(experiment::PLOT_FILE));
    write(&out, &plot::render_svg(&curves))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info,tower_http=info".into()),
        )
        .init();
    let (curriculum, id) = load_curriculum(&args.curriculum, 0)?;
    let store = FileStore::open(&args.data_dir)
        .with_context(|| format!("opening data dir {}", args.data_dir.display()))?;
    let mut config = SessionConfig::default();
    config.memory.enabled = args.mcm;
    let app = Arc::new(AppState::new(
        Arc::new(curriculum),
        id,
        config,
        Arc::new(store),
    ));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(bandit_tutor_service::serve(
        app,
        ServeOptions {
            host: args.host,
            port: args.port,
            static_dir: args.static_dir,
        },
    ))?;
    Ok(())
}
