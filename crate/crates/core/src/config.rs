//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; keys are the field names of [`TrainConfig`] and [`LossConfig`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::train::TrainConfig;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

/// Applies every assignment in `text` on top of the given configs.
pub fn apply(text: &str, train: &mut TrainConfig, loss: &mut LossConfig) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "patch_size" => train.patch_size = parse(key, value)?,
            "patch_stride" => train.patch_stride = Some(parse(key, value)?),
            "batch_size" => train.batch_size = parse(key, value)?,
            "lr0" => train.lr0 = parse(key, value)?,
            "lr_decay" => train.lr_decay = parse(key, value)?,
            "epochs" => train.epochs = parse(key, value)?,
            "seed" => train.seed = parse(key, value)?,
            "width_multiplier" => train.width_multiplier = parse(key, value)?,
            "deterministic" => train.deterministic = parse(key, value)?,
            "gamma_kind" => loss.gamma_kind = value.parse()?,
            "window" => loss.window.window_size = parse(key, value)?,
            "window_stride" => loss.window.stride = parse(key, value)?,
            "sigma_e" => loss.sigma_e = parse(key, value)?,
            "gamma_floor" => loss.gamma_floor = parse(key, value)?,
            _ => return Err(Error::Config(format!("line {}: unknown key '{key}'", n + 1))),
        }
    }
    loss.validate()?;
    train.validate()
}

pub fn load(path: impl AsRef<Path>, train: &mut TrainConfig, loss: &mut LossConfig) -> Result<()> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    apply(&text, train, loss)
}
