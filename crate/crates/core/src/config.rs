//! `key = value` training configuration files.
//!
//! Blank lines and text after `#` are ignored. Unknown keys are errors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

fn parse_schedule(v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|pair| {
            let (e, t) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entry {pair:?} is not `epoch:length`")))?;
            let e = e.trim().parse().map_err(|_| Error::Config(format!("bad schedule epoch {e:?}")))?;
            let t = t.trim().parse().map_err(|_| Error::Config(format!("bad schedule length {t:?}")))?;
            Ok((e, t))
        })
        .collect()
}

pub fn format_schedule(s: &[(usize, usize)]) -> String {
    s.iter().map(|(e, t)| format!("{e}:{t}")).collect::<Vec<_>>().join(",")
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
    }
}

/// Sets one key on `cfg`.
pub fn apply_key(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "n" => cfg.n = num(key, v)?,
        "epochs" => cfg.epochs = num(key, v)?,
        "batches_per_epoch" => cfg.batches_per_epoch = num(key, v)?,
        "batch_size" => cfg.batch_size = num(key, v)?,
        "total_steps" => cfg.total_steps = num(key, v)?,
        "schedule" => cfg.schedule = parse_schedule(v)?,
        "gamma" => cfg.gamma = num(key, v)?,
        "lr" => cfg.lr = num(key, v)?,
        "lr_decay" => cfg.lr_decay = num(key, v)?,
        "beta_v" => cfg.beta_v = num(key, v)?,
        "beta_h" => cfg.beta_h = num(key, v)?,
        "beta_h_decay" => cfg.beta_h_decay = num(key, v)?,
        "weight_decay" => cfg.weight_decay = num(key, v)?,
        "reward_clip" => cfg.reward_clip = if v == "none" { None } else { Some(num(key, v)?) },
        "seed" => cfg.seed = num(key, v)?,
        "val_instances" => cfg.val_instances = num(key, v)?,
        "val_steps" => cfg.val_steps = num(key, v)?,
        "val_every" => cfg.val_every = num(key, v)?,
        "record_timing" => cfg.record_timing = flag(key, v)?,
        "d" => cfg.net.d = num(key, v)?,
        "layers" => cfg.net.layers = num(key, v)?,
        "clip" => cfg.net.clip = num(key, v)?,
        "use_gcn" => cfg.net.use_gcn = flag(key, v)?,
        "use_lstm" => cfg.net.use_lstm = flag(key, v)?,
        "use_bidirectional" => cfg.net.use_bidirectional = flag(key, v)?,
        "use_best_solution" => cfg.net.use_best_solution = flag(key, v)?,
        "share_encoders" => cfg.net.share_encoders = flag(key, v)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

/// Applies every assignment in `text` on top of `cfg`.
pub fn apply_config_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: k + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        apply_key(cfg, key.trim(), value.trim()).map_err(|e| Error::Parse {
            line: k + 1,
            msg: e.to_string(),
        })?;
    }
    Ok(())
}

pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = TrainConfig::default();
    apply_config_text(&mut cfg, &text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Renders `cfg` in the format read by [`apply_config_text`].
pub fn render_config(cfg: &TrainConfig) -> String {
    let clip = cfg.reward_clip.map(|c| c.to_string()).unwrap_or_else(|| "none".into());
    let pairs: Vec<(&str, String)> = vec![
        ("n", cfg.n.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batches_per_epoch", cfg.batches_per_epoch.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("total_steps", cfg.total_steps.to_string()),
        ("schedule", format_schedule(&cfg.schedule)),
        ("gamma", cfg.gamma.to_string()),
        ("lr", cfg.lr.to_string()),
        ("lr_decay", cfg.lr_decay.to_string()),
        ("beta_v", cfg.beta_v.to_string()),
        ("beta_h", cfg.beta_h.to_string()),
        ("beta_h_decay", cfg.beta_h_decay.to_string()),
        ("weight_decay", cfg.weight_decay.to_string()),
        ("reward_clip", clip),
        ("seed", cfg.seed.to_string()),
        ("val_instances", cfg.val_instances.to_string()),
        ("val_steps", cfg.val_steps.to_string()),
        ("val_every", cfg.val_every.to_string()),
        ("record_timing", cfg.record_timing.to_string()),
        ("d", cfg.net.d.to_string()),
        ("layers", cfg.net.layers.to_string()),
        ("clip", cfg.net.clip.to_string()),
        ("use_gcn", cfg.net.use_gcn.to_string()),
        ("use_lstm", cfg.net.use_lstm.to_string()),
        ("use_bidirectional", cfg.net.use_bidirectional.to_string()),
        ("use_best_solution", cfg.net.use_best_solution.to_string()),
        ("share_encoders", cfg.net.share_encoders.to_string()),
    ];
    pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
