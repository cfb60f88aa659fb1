use clap::{Args, Parser, Subcommand};
use remqa::dataset::{self, build_dataset, generate_scenes, type_counts, write_all, write_scenes, Dataset, GenConfig, Split};
use remqa::pipeline::{
    build_prior, eval_metrics, prior_seed, render_trace, run_all, run_episode_traced, AgentConfig, Perception, ResultsFile,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "remqa", version, about = "Embodied manipulation question answering benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes.
    #[arg(long, default_value_t = dataset::DEFAULT_SCALE)]
    scale: usize,
    #[arg(long, default_value_t = dataset::DEFAULT_CONFIGS_PER_SCENE)]
    configs: u32,
    #[arg(long, default_value_t = dataset::DEFAULT_EPISODES_PER_SCENE)]
    episodes_per_scene: usize,
    #[arg(long, default_value_t = dataset::DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl GenArgs {
    fn config(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            scale: self.scale,
            configs_per_scene: self.configs,
            episodes_per_scene: self.episodes_per_scene,
            train_fraction: self.train_fraction,
        }
    }
}

#[derive(Args, Clone)]
struct AgentArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step budget for navigation.
    #[arg(long, default_value_t = 50)]
    budget: u32,
    /// Standard deviation of box-corner jitter, in meters.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Probability of a perceived label being replaced.
    #[arg(long, default_value_t = 0.0)]
    label_flip: f64,
    #[arg(long, default_value_t = remqa::comprehension::DEFAULT_SCORE_THRESHOLD)]
    score_threshold: f64,
    /// Classify the manipulation but never execute it.
    #[arg(long)]
    no_manipulation: bool,
}

impl AgentArgs {
    fn config(&self) -> AgentConfig {
        AgentConfig {
            seed: self.seed,
            budget: self.budget,
            noise_sigma: self.noise_sigma,
            label_flip: self.label_flip,
            score_threshold: self.score_threshold,
            max_count: remqa::pipeline::DEFAULT_MAX_COUNT,
            manipulate: !self.no_manipulation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample scenes and write their configurations and graphs.
    GenScenes(GenArgs),
    /// Sample scenes and episodes and write a dataset directory.
    GenDataset(GenArgs),
    /// Run the agent over a dataset and write a results file.
    RunAgent {
        /// Path to dataset.jsonl.
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        agent: AgentArgs,
        /// Only run episodes of scenes in this split.
        #[arg(long, value_enum)]
        split: Option<Split>,
        /// Results file to write.
        #[arg(long)]
        out: PathBuf,
        /// Print metrics as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Recompute metrics from a results file.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Re-run one episode and print its trajectory and stage log.
    Replay {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        episode: String,
    },
}

type CliResult = Result<(), String>;

fn dataset_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn gen(args: &GenArgs, episodes: bool) -> CliResult {
    let cfg = args.config();
    if episodes {
        let (ds, set) = build_dataset(&cfg).map_err(|e| e.to_string())?;
        let path = write_all(&args.out, &ds, &set).map_err(|e| e.to_string())?;
        log::info!("wrote {}", path.display());
        let summary = serde_json::json!({
            "dataset": path.display().to_string(),
            "scenes": ds.manifest.scenes.len(),
            "episodes": ds.episodes.len(),
            "per_type": type_counts(&ds.episodes),
        });
        println!("{summary}");
    } else {
        let set = generate_scenes(&cfg).map_err(|e| e.to_string())?;
        std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
        write_scenes(&args.out, &set).map_err(|e| e.to_string())?;
        let files: usize = set.scenes.iter().map(Vec::len).sum();
        println!("{}", serde_json::json!({ "scenes": set.scenes.len(), "scene_files": files }));
    }
    Ok(())
}

fn run_agent(dataset: &Path, agent: &AgentArgs, split: Option<Split>, out: &Path, json: bool) -> CliResult {
    let config = agent.config();
    config.validate().map_err(|e| e.to_string())?;
    let ds = Dataset::load(dataset).map_err(|e| format!("{}: {e}", dataset.display()))?;
    let worlds = ds.load_worlds(&dataset_dir(dataset)).map_err(|e| e.to_string())?;
    let keep: Option<Vec<&str>> =
        split.map(|s| ds.manifest.scenes.iter().filter(|e| e.split == s).map(|e| e.scene_id.as_str()).collect());
    let episodes: Vec<_> =
        ds.episodes.iter().filter(|e| keep.as_ref().is_none_or(|k| k.contains(&e.scene_id.as_str()))).cloned().collect();
    let results = run_all(&episodes, &worlds, &config).map_err(|e| e.to_string())?;
    let metrics = eval_metrics(&results).map_err(|e| e.to_string())?;
    let stored = dataset.canonicalize().unwrap_or_else(|_| dataset.to_path_buf());
    let file = ResultsFile { dataset: stored.display().to_string(), config, episodes: results, metrics: Some(metrics.clone()) };
    file.save(out).map_err(|e| format!("{}: {e}", out.display()))?;
    if json {
        println!("{}", serde_json::to_string(&metrics).expect("metrics serialize"));
    } else {
        print!("{}", metrics.table());
    }
    Ok(())
}

fn eval(results: &Path, json: bool) -> CliResult {
    let file = ResultsFile::load(results).map_err(|e| format!("{}: {e}", results.display()))?;
    let metrics = eval_metrics(&file.episodes).map_err(|e| e.to_string())?;
    if json {
        println!("{}", serde_json::to_string(&metrics).expect("metrics serialize"));
    } else {
        print!("{}", metrics.table());
    }
    Ok(())
}

fn replay(results: &Path, episode_id: &str) -> CliResult {
    let file = ResultsFile::load(results).map_err(|e| format!("{}: {e}", results.display()))?;
    let recorded =
        file.episodes.iter().find(|r| r.episode_id == episode_id).ok_or_else(|| format!("unknown episode id `{episode_id}`"))?;
    let dataset = PathBuf::from(&file.dataset);
    let ds = Dataset::load(&dataset).map_err(|e| format!("{}: {e}", dataset.display()))?;
    let episode = ds
        .episodes
        .iter()
        .find(|e| e.episode_id == episode_id)
        .ok_or_else(|| format!("episode `{episode_id}` not in {}", dataset.display()))?;
    let scene = ds
        .manifest
        .scenes
        .iter()
        .find(|s| s.scene_id == episode.scene_id)
        .and_then(|s| s.configs.get(episode.config_id as usize))
        .ok_or_else(|| format!("scene {} missing from manifest", episode.scene_id))?;
    let path = dataset_dir(&dataset).join(scene);
    let world = remqa::World::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut perception = Perception::new(
        file.config.noise_sigma,
        file.config.label_flip,
        prior_seed(file.config.seed, &world.scene_id, world.config_id),
    );
    let prior = build_prior(&world, &mut perception);
    let (result, trace) = run_episode_traced(&world, &prior, episode, &file.config);
    println!("episode {} ({}) scene {} config {}", episode.episode_id, episode.qtype, episode.scene_id, episode.config_id);
    print!("{}", render_trace(&world, &trace, &episode.target_object_id));
    for line in &trace.log {
        println!("{line}");
    }
    if &result != recorded {
        log::warn!("replayed result differs from the recorded one");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenScenes(args) => gen(args, false),
        Command::GenDataset(args) => gen(args, true),
        Command::RunAgent { dataset, agent, split, out, json } => run_agent(dataset, agent, *split, out, *json),
        Command::Eval { results, json } => eval(results, *json),
        Command::Replay { results, episode } => replay(results, episode),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
