//! `key = value` configuration text.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Keys are dotted (`fem.mode`, `train.lr`); every key is optional and falls
//! back to [`Config::default`]. Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};

type Setter = fn(&mut Config, &str) -> std::result::Result<(), String>;
type Getter = fn(&Config) -> String;

fn int(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got `{v}`"))
}

fn real(v: &str) -> std::result::Result<f64, String> {
    v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("expected a finite real number, got `{v}`"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn positive(n: usize) -> std::result::Result<usize, String> {
    if n == 0 {
        Err("must be positive".into())
    } else {
        Ok(n)
    }
}

fn probability(p: f64) -> std::result::Result<f64, String> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

const KEYS: &[(&str, Setter, Getter)] = &[
    (
        "model.width",
        |c, v| {
            c.model.width = positive(int(v)?)?;
            Ok(())
        },
        |c| c.model.width.to_string(),
    ),
    (
        "model.depth",
        |c, v| {
            c.model.depth = positive(int(v)?)?;
            Ok(())
        },
        |c| c.model.depth.to_string(),
    ),
    (
        "model.tem_every",
        |c, v| {
            c.model.tem_every = positive(int(v)?)?;
            Ok(())
        },
        |c| c.model.tem_every.to_string(),
    ),
    (
        "model.attn_heads",
        |c, v| {
            c.model.attn_heads = positive(int(v)?)?;
            Ok(())
        },
        |c| c.model.attn_heads.to_string(),
    ),
    (
        "model.mlp_ratio",
        |c, v| {
            c.model.mlp_ratio = positive(int(v)?)?;
            Ok(())
        },
        |c| c.model.mlp_ratio.to_string(),
    ),
    (
        "model.classes",
        |c, v| {
            c.model.classes = int(v)?;
            Ok(())
        },
        |c| c.model.classes.to_string(),
    ),
    (
        "model.head_width",
        |c, v| {
            c.model.head_width = positive(int(v)?)?;
            Ok(())
        },
        |c| c.model.head_width.to_string(),
    ),
    (
        "fem.enabled",
        |c, v| {
            c.fusion.fem_enabled = boolean(v)?;
            Ok(())
        },
        |c| c.fusion.fem_enabled.to_string(),
    ),
    (
        "fem.mode",
        |c, v| {
            c.fusion.fem_mode = v.parse().map_err(|e: Error| e.to_string())?;
            Ok(())
        },
        |c| c.fusion.fem_mode.to_string(),
    ),
    (
        "tem.enabled",
        |c, v| {
            c.fusion.tem_enabled = boolean(v)?;
            Ok(())
        },
        |c| c.fusion.tem_enabled.to_string(),
    ),
    (
        "tem.adapters",
        |c, v| {
            c.fusion.tem_adapters = int(v)?;
            Ok(())
        },
        |c| c.fusion.tem_adapters.to_string(),
    ),
    (
        "agf.enabled",
        |c, v| {
            c.fusion.agf_enabled = boolean(v)?;
            Ok(())
        },
        |c| c.fusion.agf_enabled.to_string(),
    ),
    (
        "agf.heads",
        |c, v| {
            c.fusion.agf_heads = positive(int(v)?)?;
            Ok(())
        },
        |c| c.fusion.agf_heads.to_string(),
    ),
    (
        "aug.enabled",
        |c, v| {
            c.aug.enabled = boolean(v)?;
            Ok(())
        },
        |c| c.aug.enabled.to_string(),
    ),
    (
        "aug.grid_rows",
        |c, v| {
            c.aug.grid.0 = positive(int(v)?)?;
            Ok(())
        },
        |c| c.aug.grid.0.to_string(),
    ),
    (
        "aug.grid_cols",
        |c, v| {
            c.aug.grid.1 = positive(int(v)?)?;
            Ok(())
        },
        |c| c.aug.grid.1.to_string(),
    ),
    (
        "aug.p_cutmix",
        |c, v| {
            c.aug.p_cutmix = probability(real(v)?)?;
            Ok(())
        },
        |c| c.aug.p_cutmix.to_string(),
    ),
    (
        "aug.p_cutout",
        |c, v| {
            c.aug.p_cutout = probability(real(v)?)?;
            Ok(())
        },
        |c| c.aug.p_cutout.to_string(),
    ),
    (
        "aug.cutout_cells",
        |c, v| {
            c.aug.cutout_cells = int(v)?;
            Ok(())
        },
        |c| c.aug.cutout_cells.to_string(),
    ),
    (
        "aug.fill_value",
        |c, v| {
            c.aug.fill_value = real(v)?;
            Ok(())
        },
        |c| c.aug.fill_value.to_string(),
    ),
    (
        "train.lr",
        |c, v| {
            c.train.lr = real(v)?;
            Ok(())
        },
        |c| c.train.lr.to_string(),
    ),
    (
        "train.weight_decay",
        |c, v| {
            c.train.weight_decay = real(v)?;
            Ok(())
        },
        |c| c.train.weight_decay.to_string(),
    ),
    (
        "train.beta1",
        |c, v| {
            c.train.beta1 = real(v)?;
            Ok(())
        },
        |c| c.train.beta1.to_string(),
    ),
    (
        "train.beta2",
        |c, v| {
            c.train.beta2 = real(v)?;
            Ok(())
        },
        |c| c.train.beta2.to_string(),
    ),
    (
        "train.eps",
        |c, v| {
            c.train.eps = real(v)?;
            Ok(())
        },
        |c| c.train.eps.to_string(),
    ),
    (
        "train.steps",
        |c, v| {
            c.train.steps = int(v)?;
            Ok(())
        },
        |c| c.train.steps.to_string(),
    ),
    (
        "train.batch",
        |c, v| {
            c.train.batch = positive(int(v)?)?;
            Ok(())
        },
        |c| c.train.batch.to_string(),
    ),
    (
        "train.seed",
        |c, v| {
            c.train.seed = v.parse().map_err(|_| format!("expected a u64 seed, got `{v}`"))?;
            Ok(())
        },
        |c| c.train.seed.to_string(),
    ),
    (
        "data.size",
        |c, v| {
            c.data.size = positive(int(v)?)?;
            Ok(())
        },
        |c| c.data.size.to_string(),
    ),
    (
        "data.train",
        |c, v| {
            c.data.train_scenes = int(v)?;
            Ok(())
        },
        |c| c.data.train_scenes.to_string(),
    ),
    (
        "data.eval",
        |c, v| {
            c.data.eval_scenes = int(v)?;
            Ok(())
        },
        |c| c.data.eval_scenes.to_string(),
    ),
];

/// All recognised keys, in rendering order.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|(k, _, _)| *k)
}

/// Parses and validates configuration text, starting from the defaults.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::ConfigLine { line, key: content.to_owned(), msg: "expected `key = value`".into() });
        };
        let (key, value) = (key.trim(), value.trim());
        let Some((name, set, _)) = KEYS.iter().find(|(k, _, _)| *k == key) else {
            return Err(Error::ConfigLine { line, key: key.to_owned(), msg: "unknown key".into() });
        };
        if let Some(first) = seen.insert(name, line) {
            return Err(Error::ConfigLine {
                line,
                key: key.to_owned(),
                msg: format!("duplicate key (first set on line {first})"),
            });
        }
        set(&mut cfg, value).map_err(|msg| Error::ConfigLine { line, key: key.to_owned(), msg })?;
    }
    cfg.validate().map_err(|e| {
        let msg = e.to_string();
        // attribute cross-field failures to the first named key that was set
        match seen.iter().filter(|(k, _)| msg.contains(*k)).min_by_key(|(_, l)| **l) {
            Some((k, &line)) => Error::ConfigLine {
                line,
                key: (*k).to_owned(),
                msg: msg.trim_start_matches("config error: ").to_owned(),
            },
            None => e,
        }
    })?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let bytes = super::read_file(path.as_ref())?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::format(e.utf8_error().valid_up_to(), "config is not valid UTF-8"))?;
    parse_config(&text)
}

/// Every key with its effective value, one `key = value` per line.
pub fn render_config(cfg: &Config) -> String {
    KEYS.iter().map(|(k, _, get)| format!("{k} = {}\n", get(cfg))).collect()
}
