//! Run configuration: one flat TOML table covering every tunable.

use std::fs;
use std::path::Path;

use finepo::advantage::AdvantageOptions;
use finepo::credit::RedistributionConfig;
use finepo::forge::{ForgeSpec, SceneParams};
use finepo::oracle::{Bands, OracleConfig};
use finepo::pipeline::CreditOptions;
use finepo::regularizer::{ActionDistribution, KlParams};
use finepo::sim::{ExperimentConfig, Mode};
use finepo::trajectory::ActionKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub std_normalize: bool,
    pub kl_lambda: f64,
    pub kl_clip_gamma: f64,
    pub window_batches: usize,
    pub prior: [f64; 4],
    pub distance_bands: [f64; 3],
    pub iou_bands: [f64; 3],
    pub grid: usize,
    pub heatmap_cell_px: u32,
    pub forge_n: usize,
    pub forge_label_ratio: [u32; 4],
    pub forge_action_balance: [u32; 4],
    pub forge_canvas: u32,
    pub forge_targets_per_type: usize,
    pub sim_mode: Mode,
    pub sim_grid: usize,
    pub sim_horizon: usize,
    pub sim_tasks: usize,
    pub sim_env_seed: u64,
    pub sim_iterations: usize,
    pub sim_seeds: usize,
    pub sim_learning_rate: f64,
    pub sim_ref_kl_beta: f64,
    pub sim_temperature: f64,
    pub sim_easy_action: Option<ActionKind>,
    pub sim_easy_factor: f64,
    pub sim_summary_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = ExperimentConfig::default();
        let forge = ForgeSpec::default();
        let bands = Bands::default();
        RunConfig {
            seed: 0,
            k: 24,
            alpha: 0.2,
            beta: 2.0,
            epsilon: 1e-6,
            std_normalize: false,
            kl_lambda: 0.1,
            kl_clip_gamma: 0.5,
            window_batches: 32,
            prior: [0.25; 4],
            distance_bands: bands.distance,
            iou_bands: bands.iou,
            grid: 32,
            heatmap_cell_px: 8,
            forge_n: forge.n,
            forge_label_ratio: forge.label_ratio,
            forge_action_balance: forge.action_balance,
            forge_canvas: forge.scene.width,
            forge_targets_per_type: forge.scene.targets_per_type,
            sim_mode: sim.mode,
            sim_grid: sim.grid,
            sim_horizon: sim.horizon,
            sim_tasks: sim.tasks,
            sim_env_seed: sim.env_seed,
            sim_iterations: sim.iterations,
            sim_seeds: sim.seeds.len(),
            sim_learning_rate: sim.learning_rate,
            sim_ref_kl_beta: sim.ref_kl_beta,
            sim_temperature: sim.temperature,
            sim_easy_action: None,
            sim_easy_factor: 4.0,
            sim_summary_window: sim.summary_window,
        }
    }
}

/// `(key, default, source, meaning)` for every config key.
pub const KEY_DOCS: &[(&str, &str, &str, &str)] = &[
    (
        "seed",
        "0",
        "chosen",
        "master seed (forge records, simulator tasks); FINEPO_SEED is used when --seed is absent",
    ),
    ("k", "24", "published", "responses per prompt group"),
    ("alpha", "0.2", "published", "credit adjustment intensity"),
    (
        "beta",
        "2.0",
        "published",
        "clip bound multiplier on the response advantage",
    ),
    (
        "epsilon",
        "1e-6",
        "published",
        "numerical stabilizer in offsets and scaling",
    ),
    (
        "std_normalize",
        "false",
        "chosen",
        "divide group advantages by the group std",
    ),
    (
        "kl_lambda",
        "0.1",
        "published",
        "action-type offset strength",
    ),
    (
        "kl_clip_gamma",
        "0.5",
        "published",
        "action-type offset clip bound",
    ),
    (
        "window_batches",
        "32",
        "chosen",
        "batches kept in the action-count window",
    ),
    (
        "prior",
        "[0.25, 0.25, 0.25, 0.25]",
        "chosen",
        "target action-type distribution (point, line, rectangle, circle)",
    ),
    (
        "distance_bands",
        "[0.02, 0.05, 0.15]",
        "chosen",
        "normalized distance edges for Excellent/Acceptable/Poor",
    ),
    (
        "iou_bands",
        "[0.75, 0.5, 0.2]",
        "chosen",
        "IoU edges for Excellent/Acceptable/Poor",
    ),
    ("grid", "32", "published", "heatmap grid size N"),
    (
        "heatmap_cell_px",
        "8",
        "chosen",
        "pixels per heatmap cell in the PNG render",
    ),
    ("forge_n", "100", "chosen", "records to forge"),
    (
        "forge_label_ratio",
        "[2, 4, 3, 1]",
        "published",
        "Excellent:Acceptable:Poor:Unacceptable",
    ),
    (
        "forge_action_balance",
        "[1, 1, 1, 1]",
        "published",
        "point:line:rectangle:circle",
    ),
    (
        "forge_canvas",
        "256",
        "chosen",
        "forged scene width and height in pixels",
    ),
    (
        "forge_targets_per_type",
        "1",
        "chosen",
        "targets per action type in each forged scene",
    ),
    (
        "sim_mode",
        "\"finepo\"",
        "chosen",
        "finepo | grpo | random-prm | no-kl",
    ),
    ("sim_grid", "8", "chosen", "simulator grid size G"),
    ("sim_horizon", "3", "chosen", "steps per simulated response"),
    (
        "sim_tasks",
        "4",
        "chosen",
        "simulated tasks, visited round robin",
    ),
    (
        "sim_env_seed",
        "7",
        "chosen",
        "seed for the simulated task layouts, independent of the training seeds",
    ),
    (
        "sim_iterations",
        "200",
        "chosen",
        "simulator iterations per seed",
    ),
    (
        "sim_seeds",
        "10",
        "chosen",
        "number of seeds (0..n) when --seeds is absent",
    ),
    (
        "sim_learning_rate",
        "0.1",
        "tabular",
        "policy step size (large-model published value is 1e-6)",
    ),
    (
        "sim_ref_kl_beta",
        "0.01",
        "published",
        "reference-policy KL coefficient",
    ),
    (
        "sim_temperature",
        "1.0",
        "published",
        "sampling temperature",
    ),
    (
        "sim_easy_action",
        "none",
        "chosen",
        "action type given lenient process bands (easy environment)",
    ),
    (
        "sim_easy_factor",
        "4.0",
        "chosen",
        "band widening factor for sim_easy_action",
    ),
    (
        "sim_summary_window",
        "20",
        "chosen",
        "trailing iterations averaged into the run summary",
    ),
];

pub fn key_help() -> String {
    let mut out = String::from(
        "CONFIG KEYS (TOML file via --config, overridden by --set key=value, overridden by dedicated flags):\n",
    );
    for (key, default, source, meaning) in KEY_DOCS {
        out.push_str(&format!(
            "  {key:<24} default {default:<26} [{source}] {meaning}\n"
        ));
    }
    out.push_str("\nSources: published = stated training default; tabular = rescaled for the tabular simulator; chosen = implementation default.\n");
    out.push_str("Exit codes: 0 success, 1 usage, 2 validation, 3 I/O.\n");
    out
}

/// Parse one `--set` value: TOML literal first, bare string otherwise.
fn parse_override(item: &str) -> Result<(String, toml::Value), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{item}`")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key, value))
}

impl RunConfig {
    /// Load `path` (if any), apply `--set` overrides, then validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::Io(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, value) = parse_override(item)?;
            table.insert(key, value);
        }
        let cfg: RunConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    CliError::Validation(format!("config: {}", e.message()))
                })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if self.grid < 2 {
            return bad(format!("grid must be >= 2, got {}", self.grid));
        }
        if self.heatmap_cell_px == 0 || self.heatmap_cell_px > 256 {
            return bad(format!(
                "heatmap_cell_px must be in 1..=256, got {}",
                self.heatmap_cell_px
            ));
        }
        if self.window_batches == 0 {
            return bad("window_batches must be >= 1".into());
        }
        self.redistribution()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.kl_params()
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.prior_distribution()?;
        self.oracle()?;
        self.forge_spec(self.forge_n, self.seed)
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if !(self.sim_easy_factor >= 1.0 && self.sim_easy_factor.is_finite()) {
            return bad(format!(
                "sim_easy_factor must be >= 1, got {}",
                self.sim_easy_factor
            ));
        }
        if self.sim_seeds == 0 {
            return bad("sim_seeds must be >= 1".into());
        }
        self.experiment(self.sim_mode, (0..self.sim_seeds as u64).collect())
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn redistribution(&self) -> Result<RedistributionConfig, finepo::CreditError> {
        RedistributionConfig::new(self.alpha, self.beta, self.epsilon)
    }

    pub fn credit_options(&self) -> CreditOptions {
        CreditOptions {
            advantage: AdvantageOptions {
                std_normalize: self.std_normalize,
                ..Default::default()
            },
            redistribution: RedistributionConfig {
                alpha: self.alpha,
                beta: self.beta,
                epsilon: self.epsilon,
            },
            redistribute: true,
        }
    }

    pub fn kl_params(&self) -> KlParams {
        KlParams {
            lambda: self.kl_lambda,
            gamma: self.kl_clip_gamma,
            epsilon: self.epsilon,
        }
    }

    pub fn prior_distribution(&self) -> Result<ActionDistribution, CliError> {
        ActionDistribution::new(self.prior).map_err(|e| CliError::Validation(format!("prior: {e}")))
    }

    pub fn oracle(&self) -> Result<OracleConfig, CliError> {
        OracleConfig::uniform(Bands {
            distance: self.distance_bands,
            iou: self.iou_bands,
        })
        .map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn forge_spec(&self, n: usize, seed: u64) -> ForgeSpec {
        ForgeSpec {
            n,
            label_ratio: self.forge_label_ratio,
            action_balance: self.forge_action_balance,
            seed,
            scene: SceneParams {
                width: self.forge_canvas,
                height: self.forge_canvas,
                targets_per_type: self.forge_targets_per_type,
            },
        }
    }

    pub fn experiment(&self, mode: Mode, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            k: self.k,
            learning_rate: self.sim_learning_rate,
            ref_kl_beta: self.sim_ref_kl_beta,
            temperature: self.sim_temperature,
            redistribution: RedistributionConfig {
                alpha: self.alpha,
                beta: self.beta,
                epsilon: self.epsilon,
            },
            kl: self.kl_params(),
            window_batches: self.window_batches,
            prior: self.prior,
            grid: self.sim_grid,
            horizon: self.sim_horizon,
            tasks: self.sim_tasks,
            env_seed: self.sim_env_seed,
            iterations: self.sim_iterations,
            seeds,
            easy_action: self.sim_easy_action.map(|k| (k, self.sim_easy_factor)),
            summary_window: self.sim_summary_window,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_field_is_documented() {
        let value = toml::Value::try_from(RunConfig::default()).unwrap();
        let table = value.as_table().unwrap();
        for key in table.keys() {
            assert!(
                KEY_DOCS.iter().any(|(k, ..)| k == key),
                "undocumented key {key}"
            );
        }
        // sim_easy_action is None and therefore absent from the serialized table
        assert_eq!(KEY_DOCS.len(), table.len() + 1);
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg = RunConfig::load(None, &["alpha=0.3".into(), "sim_mode=grpo".into()]).unwrap();
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.sim_mode, Mode::Grpo);
        assert!(matches!(
            RunConfig::load(None, &["alpah=0.3".into()]),
            Err(CliError::Validation(_))
        ));
        assert!(matches!(
            RunConfig::load(None, &["beta=0.5".into()]),
            Err(CliError::Validation(_))
        ));
        assert!(matches!(
            RunConfig::load(None, &["noequals".into()]),
            Err(CliError::Usage(_))
        ));
        let cfg = RunConfig::load(None, &["sim_easy_action=point".into()]).unwrap();
        assert_eq!(cfg.sim_easy_action, Some(ActionKind::Point));
    }

    #[test]
    fn defaults_match_the_library() {
        let cfg = RunConfig::default();
        assert_eq!(
            cfg.experiment(Mode::Finepo, (0..10).collect()),
            ExperimentConfig::default()
        );
        assert_eq!(cfg.forge_spec(100, 0), ForgeSpec::default());
        assert_eq!(cfg.kl_params(), KlParams::default());
    }
}
