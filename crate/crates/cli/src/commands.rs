//! Subcommand implementations.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use finepo::forge::{self, ForgeError};
use finepo::oracle::{self, OracleError, Scene};
use finepo::pipeline::{assign_credit, group_action_counts, PipelineError};
use finepo::regularizer::{ActionRegularizer, WindowedActionCounts};
use finepo::render::{self, RasterImage, StrokeStyle};
use finepo::sim::{self, MetricsLog, Mode, SimError};
use finepo::trajectory::{self, parse_action, Action, ActionKind, Response, TrajectoryError};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn io_error(what: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{what} {}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_error("cannot write", path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error("cannot create", path, e))
}

fn trajectory_error(path: &Path, e: TrajectoryError) -> CliError {
    match e {
        TrajectoryError::Io(e) => io_error("cannot read", path, e),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

fn forge_error(e: ForgeError) -> CliError {
    match e {
        ForgeError::Io { .. } => CliError::Io(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn sim_error(e: SimError) -> CliError {
    CliError::Validation(e.to_string())
}

fn oracle_error(e: OracleError) -> CliError {
    CliError::Validation(e.to_string())
}

fn pipeline_error(e: PipelineError) -> CliError {
    CliError::Validation(e.to_string())
}

/// Output sink: a file, or standard output with `--stdout`.
fn open_output(out: Option<&Path>, stdout: bool) -> Result<Box<dyn Write>, CliError> {
    match (out, stdout) {
        (_, true) => Ok(Box::new(io::BufWriter::new(io::stdout().lock()))),
        (Some(p), false) => {
            let f = fs::File::create(p).map_err(|e| io_error("cannot create", p, e))?;
            Ok(Box::new(io::BufWriter::new(f)))
        }
        (None, false) => Err(CliError::Usage(
            "either --out or --stdout is required".into(),
        )),
    }
}

#[derive(Debug, Args)]
pub struct RedistributeArgs {
    /// Trajectory JSONL file.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Advantages JSONL output file.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Write the advantages JSONL to standard output instead.
    #[arg(long, conflicts_with = "out")]
    pub stdout: bool,
    /// Group size (overrides the `k` key).
    #[arg(long)]
    pub k: Option<usize>,
    /// Include per-token advantages in every record.
    #[arg(long)]
    pub tokens: bool,
    /// Action-count window state: restored when the file exists, saved afterwards.
    #[arg(long)]
    pub window_state: Option<PathBuf>,
}

#[derive(Serialize)]
struct AdvantageRecord<'a> {
    prompt_id: &'a str,
    response: usize,
    advantage: f64,
    step_advantages: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    token_advantages: Option<&'a [f64]>,
}

pub fn redistribute(cfg: &RunConfig, args: &RedistributeArgs) -> Result<(), CliError> {
    let k = args.k.unwrap_or(cfg.k);
    if k < 2 {
        return Err(CliError::Validation(format!("k must be >= 2, got {k}")));
    }
    let file = fs::File::open(&args.input).map_err(|e| io_error("cannot open", &args.input, e))?;
    let responses = trajectory::read_trajectories(BufReader::new(file))
        .map_err(|e| trajectory_error(&args.input, e))?;
    let n_responses = responses.len();
    let groups =
        trajectory::group_responses(responses, k).map_err(|e| trajectory_error(&args.input, e))?;

    let window = match &args.window_state {
        Some(p) if p.exists() => {
            let text = fs::read_to_string(p).map_err(|e| io_error("cannot read", p, e))?;
            WindowedActionCounts::restore(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        _ => WindowedActionCounts::new(cfg.window_batches)
            .map_err(|e| CliError::Validation(e.to_string()))?,
    };
    let mut regularizer =
        ActionRegularizer::with_window(window, cfg.prior_distribution()?, cfg.kl_params())
            .map_err(|e| CliError::Validation(e.to_string()))?;
    let opts = cfg.credit_options();

    let mut sink = open_output(args.out.as_deref(), args.stdout)?;
    let mut clips = 0;
    let mut offsets = finepo::OffsetTable::zero();
    for group in &groups {
        offsets = regularizer.observe_batch(&[group_action_counts(group)]);
        let credit = assign_credit(group, &offsets, &opts).map_err(pipeline_error)?;
        clips += credit.clip_activations();
        for (i, (steps, tokens)) in credit.steps.iter().zip(&credit.tokens).enumerate() {
            let record = AdvantageRecord {
                prompt_id: group.prompt_id(),
                response: i,
                advantage: credit.base[i],
                step_advantages: &steps.advantages,
                token_advantages: args.tokens.then_some(tokens.values.as_slice()),
            };
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(sink, "{line}")
                .map_err(|e| CliError::Io(format!("cannot write output: {e}")))?;
        }
    }
    sink.flush()
        .map_err(|e| CliError::Io(format!("cannot write output: {e}")))?;
    if let Some(p) = &args.window_state {
        write_file(p, regularizer.window().dump().as_bytes())?;
    }
    let table: Vec<String> = ActionKind::CREDITABLE
        .iter()
        .map(|&kind| format!("{kind}={:+.6}", offsets.get(kind)))
        .collect();
    eprintln!(
        "groups processed: {}; responses: {n_responses}; clip activations: {clips}; offsets: {}",
        groups.len(),
        table.join(" ")
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Scene JSON file.
    #[arg(long)]
    pub scene: PathBuf,
    /// Target id within the scene.
    #[arg(long)]
    pub target: String,
    /// Action template JSON; its shape is moved to every cell center.
    #[arg(long, default_value = r#"{"type":"point","x":0,"y":0}"#)]
    pub template: String,
    /// Grid size N (overrides the `grid` key).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Output directory for heatmap.csv and heatmap.png.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Print the CSV to standard output instead of writing files.
    #[arg(long, conflicts_with = "out")]
    pub stdout: bool,
}

pub fn heatmap(cfg: &RunConfig, args: &HeatmapArgs) -> Result<(), CliError> {
    let n = args.grid.unwrap_or(cfg.grid);
    if n < 2 {
        return Err(CliError::Validation(format!("grid must be >= 2, got {n}")));
    }
    let text =
        fs::read_to_string(&args.scene).map_err(|e| io_error("cannot read", &args.scene, e))?;
    let scene = Scene::from_json(&text).map_err(oracle_error)?;
    let template: Action = parse_action(&args.template)
        .map_err(|e| CliError::Validation(format!("--template: {e}")))?;
    let map = oracle::heatmap(&scene, &args.target, &template, n, &cfg.oracle()?)
        .map_err(oracle_error)?;
    let csv = map.to_csv();
    if args.stdout {
        print!("{csv}");
    } else {
        let dir = args
            .out
            .as_deref()
            .ok_or_else(|| CliError::Usage("either --out or --stdout is required".into()))?;
        create_dir(dir)?;
        write_file(&dir.join("heatmap.csv"), csv.as_bytes())?;
        let png = map
            .to_image(cfg.heatmap_cell_px)
            .and_then(|img| img.to_png())
            .map_err(|e| CliError::Validation(e.to_string()))?;
        write_file(&dir.join("heatmap.png"), &png)?;
    }
    let (row, col) = map.argmax();
    let (x, y) = map.center_of(row, col);
    eprintln!("{n}x{n} heatmap; peak cell ({row}, {col}) centered at ({x:.1}, {y:.1})");
    Ok(())
}

fn parse_ratio(s: &str) -> Result<[u32; 4], CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let values: Result<Vec<u32>, _> = parts.iter().map(|p| p.trim().parse::<u32>()).collect();
    match values {
        Ok(v) if v.len() == 4 => Ok([v[0], v[1], v[2], v[3]]),
        _ => Err(CliError::Usage(format!(
            "expected four `:`-separated integers, got `{s}`"
        ))),
    }
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    /// Records to generate (overrides `forge_n`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Excellent:Acceptable:Poor:Unacceptable, e.g. 2:4:3:1.
    #[arg(long)]
    pub label_ratio: Option<String>,
    /// point:line:rectangle:circle, e.g. 1:1:1:1.
    #[arg(long)]
    pub action_balance: Option<String>,
}

pub fn forge(cfg: &RunConfig, args: &ForgeArgs) -> Result<(), CliError> {
    let mut spec = cfg.forge_spec(args.n.unwrap_or(cfg.forge_n), cfg.seed);
    if let Some(r) = &args.label_ratio {
        spec.label_ratio = parse_ratio(r)?;
    }
    if let Some(r) = &args.action_balance {
        spec.action_balance = parse_ratio(r)?;
    }
    spec.validate().map_err(forge_error)?;
    create_dir(&args.out)?;
    let data = forge::write_dataset(&spec, &cfg.oracle()?, &args.out).map_err(forge_error)?;
    let labels: Vec<String> = data
        .manifest
        .label_counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    let actions: Vec<String> = data
        .manifest
        .action_counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    eprintln!(
        "forged {} records into {}; labels {}; actions {}",
        data.records.len(),
        args.out.display(),
        labels.join(" "),
        actions.join(" ")
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Comma-separated modes (finepo, grpo, random-prm, no-kl) or `all`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Seed count `n` (seeds 0..n) or a comma-separated seed list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Iterations per seed (overrides `sim_iterations`).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Give this action type lenient process bands.
    #[arg(long)]
    pub easy_action: Option<String>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write a learning-curve PNG per seed.
    #[arg(long)]
    pub plot: bool,
}

fn parse_modes(s: &str) -> Result<Vec<Mode>, CliError> {
    if s == "all" {
        return Ok(Mode::ALL.to_vec());
    }
    s.split(',')
        .map(|m| {
            m.trim()
                .parse::<Mode>()
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "--seeds expects a count or a comma-separated list, got `{s}`"
        ))
    };
    if s.contains(',') {
        return s
            .split(',')
            .map(|v| v.trim().parse::<u64>().map_err(|_| bad()))
            .collect();
    }
    let n: u64 = s.trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((0..n).collect())
}

type Series = fn(&sim::MetricsRow) -> f64;

/// Success rate (red) and mean oracle score scaled to [0, 1] (blue) per iteration.
fn plot_curve(log: &MetricsLog) -> Result<RasterImage, render::RenderError> {
    let mut img = RasterImage::new(480, 300, render::WHITE)?;
    let axis = StrokeStyle {
        color: [0, 0, 0],
        width: 1,
    };
    let to_x = |i: usize| 60.0 + 920.0 * i as f64 / log.rows.len().saturating_sub(1).max(1) as f64;
    let to_y = |v: f64| 940.0 - 880.0 * v.clamp(0.0, 1.0);
    let seg = |x1: f64, y1: f64, x2: f64, y2: f64| Action::Line {
        x1: x1.round() as u16,
        y1: y1.round() as u16,
        x2: x2.round() as u16,
        y2: y2.round() as u16,
    };
    render::draw(&mut img, &seg(60.0, 940.0, 980.0, 940.0), &axis);
    render::draw(&mut img, &seg(60.0, 60.0, 60.0, 940.0), &axis);
    let series: [(Series, [u8; 3]); 2] = [
        (|r| r.success_rate, render::RED),
        (|r| (r.mean_oracle_score - 1.0) / 3.0, [30, 90, 200]),
    ];
    for (value, color) in series {
        let style = StrokeStyle { color, width: 2 };
        for (i, pair) in log.rows.windows(2).enumerate() {
            let line = seg(
                to_x(i),
                to_y(value(&pair[0])),
                to_x(i + 1),
                to_y(value(&pair[1])),
            );
            render::draw(&mut img, &line, &style);
        }
    }
    Ok(img)
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<(), CliError> {
    let modes = match &args.mode {
        Some(m) => parse_modes(m)?,
        None => vec![cfg.sim_mode],
    };
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s)?,
        None => (0..cfg.sim_seeds as u64).collect(),
    };
    let mut run_cfg = cfg.clone();
    if let Some(n) = args.iters {
        run_cfg.sim_iterations = n;
    }
    if let Some(kind) = &args.easy_action {
        let kind: ActionKind = kind
            .parse()
            .map_err(|e: TrajectoryError| CliError::Usage(e.to_string()))?;
        run_cfg.sim_easy_action = Some(kind);
    }
    create_dir(&args.out)?;
    let mut summary = String::from(sim::SUMMARY_HEADER);
    summary.push('\n');
    for mode in modes {
        let exp = run_cfg.experiment(mode, seeds.clone());
        exp.validate().map_err(sim_error)?;
        let runs = sim::run_experiment(&exp).map_err(sim_error)?;
        let dir = args.out.join(mode.name());
        create_dir(&dir)?;
        for run in &runs {
            write_file(
                &dir.join(format!("metrics_seed{}.csv", run.seed)),
                run.metrics.to_csv().as_bytes(),
            )?;
            if args.plot {
                let png = plot_curve(&run.metrics)
                    .and_then(|img| img.to_png())
                    .map_err(|e| CliError::Validation(e.to_string()))?;
                write_file(&dir.join(format!("curve_seed{}.png", run.seed)), &png)?;
            }
        }
        let block = sim::summary_csv(&runs);
        summary.extend(block.lines().skip(1).map(|l| format!("{l}\n")));
        let median = block.lines().last().unwrap_or_default();
        eprintln!(
            "{mode}: {} seeds x {} iterations; median row: {median}",
            runs.len(),
            exp.iterations
        );
    }
    write_file(&args.out.join("summary.csv"), summary.as_bytes())?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Trajectory JSONL file.
    pub path: PathBuf,
    /// Also check that responses form complete groups of this size.
    #[arg(long)]
    pub k: Option<usize>,
}

pub fn inspect(_cfg: &RunConfig, args: &InspectArgs) -> Result<(), CliError> {
    let file = fs::File::open(&args.path).map_err(|e| io_error("cannot open", &args.path, e))?;
    let mut ok = Vec::new();
    let mut failures = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error("cannot read", &args.path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Response>(&line) {
            Ok(r) => {
                println!(
                    "line {}: OK prompt_id={} steps={} reward={} tokens={}",
                    idx + 1,
                    r.prompt_id(),
                    r.steps().len(),
                    r.terminal_reward(),
                    r.total_token_length()
                );
                ok.push(r);
            }
            Err(e) => {
                failures += 1;
                println!("line {}: ERROR {e}", idx + 1);
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Validation(format!(
            "{failures} malformed record(s) in {}",
            args.path.display()
        )));
    }
    if let Some(k) = args.k {
        let groups =
            trajectory::group_responses(ok, k).map_err(|e| trajectory_error(&args.path, e))?;
        println!("{} complete group(s) of {k}", groups.len());
    }
    Ok(())
}
