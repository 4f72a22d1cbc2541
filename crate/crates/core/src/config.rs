//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored; unknown keys are
//! rejected. Relative paths resolve against the directory of the file.
//!
//! | key                   | meaning                                           | default        |
//! |-----------------------|---------------------------------------------------|----------------|
//! | `scans`               | directory of CT volumes (`*.mhd`, MET_SHORT)      | none           |
//! | `labels`              | directory of ground-truth volumes, same stems     | none           |
//! | `label_left`          | left-lung label                                   | 1              |
//! | `label_right`         | right-lung label                                  | 2              |
//! | `label_trachea`       | trachea label or `none`                           | none           |
//! | `strict_labels`       | reject unmapped nonzero labels                    | true           |
//! | `mode`                | `rgb`, `bgr` or `gray`                            | rgb            |
//! | `input_size`          | `HxW`, multiples of 32                            | 512x512        |
//! | `width_multiplier`    | fraction in (0, 1], e.g. `1/8`                    | 1              |
//! | `decoder_channels`    | five comma-separated counts                       | 512,256,128,64,32 |
//! | `freeze_encoder`      | train the decoder only                            | true           |
//! | `pretrained`          | weight container loaded non-strictly before training | none        |
//! | `seed`                | network initialization and shuffling seed         | 0              |
//! | `initial_lr`          |                                                   | 0.001          |
//! | `batch_size`          |                                                   | 2              |
//! | `max_epochs`          |                                                   | 50             |
//! | `plateau_factor`      |                                                   | 0.5            |
//! | `plateau_patience`    |                                                   | 3              |
//! | `plateau_min_delta`   |                                                   | 0.0001         |
//! | `min_lr`              |                                                   | 0.000001       |
//! | `early_stop_patience` |                                                   | 5              |
//! | `threshold`           | probability cut for the binary mask               | 0.5            |
//! | `folds`               | cross-validation folds                            | 10             |
//! | `val_fraction`        | share of training scans held out for validation   | 0.1            |
//! | `out`                 | output directory                                  | `out`          |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net::{NetworkConfig, WidthMultiplier};
use crate::slab::SlabMode;
use crate::train::TrainConfig;
use crate::volume::LabelMap;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scans: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub label_map: LabelMap,
    pub strict_labels: bool,
    pub mode: SlabMode,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub pretrained: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scans: None,
            labels: None,
            label_map: LabelMap::default(),
            strict_labels: true,
            mode: SlabMode::Rgb,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            pretrained: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "bad boolean `{value}` for `{key}`"
        ))),
    }
}

fn existing(base: &Path, key: &str, value: &str) -> Result<PathBuf> {
    let p = base.join(value);
    if !p.exists() {
        return Err(Error::InvalidConfig(format!(
            "`{key}` path {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim(), base)?;
        }
        cfg.network.seed = cfg.train.seed;
        cfg.network.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let t = &mut self.train;
        match key {
            "scans" => self.scans = Some(existing(base, key, value)?),
            "labels" => self.labels = Some(existing(base, key, value)?),
            "pretrained" => self.pretrained = Some(existing(base, key, value)?),
            "out" => self.out = base.join(value),
            "label_left" => self.label_map.left_lung = parse(key, value)?,
            "label_right" => self.label_map.right_lung = parse(key, value)?,
            "label_trachea" => {
                self.label_map.trachea = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "strict_labels" => self.strict_labels = parse_bool(key, value)?,
            "mode" => self.mode = value.parse()?,
            "input_size" => {
                let (h, w) = value
                    .split_once(['x', 'X'])
                    .ok_or_else(|| Error::InvalidConfig(format!("bad input_size `{value}`")))?;
                self.network.input_size = (parse(key, h.trim())?, parse(key, w.trim())?);
            }
            "width_multiplier" => self.network.width = value.parse::<WidthMultiplier>()?,
            "decoder_channels" => {
                let v: Vec<usize> = value
                    .split(',')
                    .map(|c| parse(key, c.trim()))
                    .collect::<Result<_>>()?;
                self.network.decoder_channels = v.try_into().map_err(|_| {
                    Error::InvalidConfig("decoder_channels needs exactly five values".into())
                })?;
            }
            "freeze_encoder" => self.network.freeze_encoder = parse_bool(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "initial_lr" => t.initial_lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "plateau_factor" => t.plateau.factor = parse(key, value)?,
            "plateau_patience" => t.plateau.patience = parse(key, value)?,
            "plateau_min_delta" => t.plateau.min_delta = parse(key, value)?,
            "min_lr" => t.plateau.min_lr = parse(key, value)?,
            "early_stop_patience" => t.early_stop_patience = parse(key, value)?,
            "threshold" => t.threshold = parse(key, value)?,
            "folds" => t.k = parse(key, value)?,
            "val_fraction" => t.val_fraction = parse(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.network.seed = seed;
    }
}
