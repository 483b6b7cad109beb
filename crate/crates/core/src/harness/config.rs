//! `key = value` sweep configuration, one key per line, `#` comments.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::explain::{LimeConfig, Method, ShapConfig};
use crate::metrics::MetricConfig;
use crate::nnlite::{ModelKind, ModelSpec, TrainConfig};
use crate::synthgen::ConfounderKind;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub confounders: Vec<ConfounderKind>,
    pub p_grid: Vec<u32>,
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub model: ModelKind,
    /// Epochs, batch size and Adam settings; the seed is replaced per cell.
    pub train: TrainConfig,
    pub explainers: Vec<Method>,
    pub metric: MetricConfig,
    pub segments_per_side: usize,
    /// Sample count, kernel width and ridge; the seed is replaced per image.
    pub lime: LimeConfig,
    pub shap: ShapConfig,
    pub output: PathBuf,
    pub heatmaps: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            confounders: vec![
                ConfounderKind::tag(),
                ConfounderKind::hyperintensity(),
                ConfounderKind::obstruction(),
            ],
            p_grid: vec![0, 20, 50, 80, 100],
            seeds: vec![0, 1, 2],
            n_train: 1200,
            n_val: 150,
            n_test: 150,
            image_size: 64,
            model: ModelKind::TinyCnn,
            train: TrainConfig::default(),
            explainers: Method::ALL.to_vec(),
            metric: MetricConfig::default(),
            segments_per_side: 8,
            lime: LimeConfig::default(),
            shap: ShapConfig::default(),
            output: PathBuf::from("out"),
            heatmaps: true,
        }
    }
}

impl SweepConfig {
    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelKind::TinyCnn => ModelSpec::tiny_cnn(self.image_size),
            ModelKind::Linear => ModelSpec::linear(self.image_size, self.image_size),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Param(msg));
        if self.confounders.is_empty() {
            return err("at least one confounder required".into());
        }
        if self.p_grid.is_empty() {
            return err("p_grid is empty".into());
        }
        if let Some(p) = self.p_grid.iter().find(|p| **p > 100) {
            return err(format!("p value {p} outside [0,100]"));
        }
        if self.seeds.is_empty() {
            return err("at least one seed required".into());
        }
        if self.explainers.is_empty() {
            return err("at least one explainer required".into());
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return err("split sizes must be positive".into());
        }
        if self.segments_per_side == 0 || !self.image_size.is_multiple_of(self.segments_per_side) {
            return err(format!(
                "segments per side {} must divide image size {}",
                self.segments_per_side, self.image_size
            ));
        }
        self.train.validate()?;
        self.metric.validate()?;
        self.lime.validate(self.segments_per_side * self.segments_per_side)?;
        self.model_spec().validate()?;
        for c in &self.confounders {
            c.validate(self.image_size, self.image_size)?;
        }
        Ok(())
    }

    /// Parses configuration text. Absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| Error::Config { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected 'key = value', found '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(fail(format!("duplicate key '{key}'")));
            }
            seen.push(key.to_string());
            cfg.set(key, value).map_err(|e| match e {
                Error::Config { msg, .. } => fail(msg),
                other => fail(other.to_string()),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config {
                line: 0,
                msg: format!("cannot parse '{v}' for '{key}'"),
            })
        }
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        let bad = |msg: String| Error::Config { line: 0, msg };
        match key {
            "confounders" => {
                self.confounders = value
                    .split(',')
                    .map(|s| s.parse::<ConfounderKind>())
                    .collect::<Result<_>>()?
            }
            "p_grid" => {
                let grid: Vec<u32> = list(key, value)?;
                if let Some(p) = grid.iter().find(|p| **p > 100) {
                    return Err(bad(format!("p value {p} outside [0,100]")));
                }
                self.p_grid = grid;
            }
            "seeds" => self.seeds = list(key, value)?,
            "n_train" => self.n_train = num(key, value)?,
            "n_val" => self.n_val = num(key, value)?,
            "n_test" => self.n_test = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "model" => self.model = value.parse()?,
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "explainers" => self.explainers = value.split(',').map(|s| s.parse::<Method>()).collect::<Result<_>>()?,
            "top_frac" => self.metric.top_frac = num(key, value)?,
            "max_samples" => self.metric.max_samples = num(key, value)?,
            "rank_mode" => self.metric.rank_mode = value.parse()?,
            "segments" => self.segments_per_side = num(key, value)?,
            "lime_samples" => self.lime.n_samples = num(key, value)?,
            "lime_kernel_width" => self.lime.kernel_width = num(key, value)?,
            "lime_ridge" => self.lime.ridge = num(key, value)?,
            "shap_max_evals" => {
                self.shap.max_evals = match value {
                    "none" | "exact" => None,
                    v => Some(num(key, v)?),
                }
            }
            "output" => self.output = PathBuf::from(value),
            "heatmaps" => {
                self.heatmaps = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    v => return Err(bad(format!("cannot parse '{v}' as a boolean"))),
                }
            }
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(SweepConfig::parse("").unwrap(), SweepConfig::default());
        assert_eq!(
            SweepConfig::parse("# only a comment\n\n").unwrap(),
            SweepConfig::default()
        );
    }

    #[test]
    fn p_grid_parses() {
        let cfg = SweepConfig::parse("p_grid = 0,50,100\n").unwrap();
        assert_eq!(cfg.p_grid, vec![0, 50, 100]);
    }

    #[test]
    fn out_of_range_p_is_rejected_with_line() {
        let err = SweepConfig::parse("seeds = 1\np_grid = 0,150\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_and_unparsable_keys() {
        assert!(matches!(
            SweepConfig::parse("colour = red"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            SweepConfig::parse("# c\nepochs = many"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            SweepConfig::parse("epochs = 3\nepochs = 4"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(SweepConfig::parse("explainers = gradient,telepathy").is_err());
        assert!(SweepConfig::parse("explainers = ").is_err());
    }

    #[test]
    fn full_config() {
        let text = "\
confounders = tag, lines
seeds = 4
explainers = shap,lime   # two methods
model = linear
shap_max_evals = none
rank_mode = signed
heatmaps = false
output = /tmp/x
";
        let cfg = SweepConfig::parse(text).unwrap();
        assert_eq!(cfg.confounders.len(), 2);
        assert_eq!(cfg.confounders[1].name(), "lines");
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.explainers, vec![Method::Shap, Method::Lime]);
        assert_eq!(cfg.model, ModelKind::Linear);
        assert_eq!(cfg.shap.max_evals, None);
        assert!(!cfg.heatmaps);
        assert_eq!(cfg.output, PathBuf::from("/tmp/x"));
    }
}
