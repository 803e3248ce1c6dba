use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::networks::ChannelSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropSetting {
    /// 128 when `max_dim <= 300`, else 256.
    Auto,
    Off,
    Window(usize),
}

impl CropSetting {
    pub fn resolve(&self, max_dim: usize) -> Option<usize> {
        match *self {
            CropSetting::Auto => Some(if max_dim <= 300 { 128 } else { 256 }),
            CropSetting::Off => None,
            CropSetting::Window(w) => Some(w),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_gp: f64,
    pub alpha_rec: f64,
    pub alpha_sem: f64,
    pub sigma_base: f64,
    pub c_rec: f64,
    pub scale_factor: f64,
    pub min_dim: usize,
    pub max_dim: usize,
    pub crop: CropSetting,
    pub channel_base: usize,
    pub channel_cap: usize,
    pub channel_period: usize,
    /// 0 means "same as the level's width".
    pub spade_hidden: usize,
    /// Start each level from the next coarser level's weights when shapes match.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            d_steps: 3,
            g_steps: 3,
            lr_g: 5e-4,
            lr_d: 5e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda_gp: 0.1,
            alpha_rec: 10.0,
            alpha_sem: 0.0,
            sigma_base: 0.1,
            c_rec: 0.1,
            scale_factor: 0.75,
            min_dim: 25,
            max_dim: 250,
            crop: CropSetting::Auto,
            channel_base: 32,
            channel_cap: 512,
            channel_period: 4,
            spade_hidden: 0,
            warm_start: true,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}"))),
    }
}

pub const KEYS: &[&str] = &[
    "iterations",
    "d_steps",
    "g_steps",
    "lr_g",
    "lr_d",
    "beta1",
    "beta2",
    "lambda_gp",
    "alpha_rec",
    "alpha_sem",
    "sigma_base",
    "c_rec",
    "scale_factor",
    "min_dim",
    "max_dim",
    "crop",
    "channel_base",
    "channel_cap",
    "channel_period",
    "spade_hidden",
    "warm_start",
    "seed",
];

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "iterations" => self.iterations = parse(key, v)?,
            "d_steps" => self.d_steps = parse(key, v)?,
            "g_steps" => self.g_steps = parse(key, v)?,
            "lr" => {
                self.lr_g = parse(key, v)?;
                self.lr_d = self.lr_g;
            }
            "lr_g" => self.lr_g = parse(key, v)?,
            "lr_d" => self.lr_d = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "lambda_gp" => self.lambda_gp = parse(key, v)?,
            "alpha_rec" => self.alpha_rec = parse(key, v)?,
            "alpha_sem" => self.alpha_sem = parse(key, v)?,
            "sigma_base" => self.sigma_base = parse(key, v)?,
            "c_rec" => self.c_rec = parse(key, v)?,
            "scale_factor" => self.scale_factor = parse(key, v)?,
            "min_dim" => self.min_dim = parse(key, v)?,
            "max_dim" => self.max_dim = parse(key, v)?,
            "crop" => {
                self.crop = match v {
                    "auto" => CropSetting::Auto,
                    "none" | "off" => CropSetting::Off,
                    n => CropSetting::Window(parse(key, n)?),
                }
            }
            "channel_base" => self.channel_base = parse(key, v)?,
            "channel_cap" => self.channel_cap = parse(key, v)?,
            "channel_period" => self.channel_period = parse(key, v)?,
            "spade_hidden" => self.spade_hidden = parse(key, v)?,
            "warm_start" => self.warm_start = parse_bool(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let crop = match self.crop {
            CropSetting::Auto => "auto".to_string(),
            CropSetting::Off => "none".to_string(),
            CropSetting::Window(w) => w.to_string(),
        };
        let vals: Vec<String> = vec![
            self.iterations.to_string(),
            self.d_steps.to_string(),
            self.g_steps.to_string(),
            self.lr_g.to_string(),
            self.lr_d.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.lambda_gp.to_string(),
            self.alpha_rec.to_string(),
            self.alpha_sem.to_string(),
            self.sigma_base.to_string(),
            self.c_rec.to_string(),
            self.scale_factor.to_string(),
            self.min_dim.to_string(),
            self.max_dim.to_string(),
            crop,
            self.channel_base.to_string(),
            self.channel_cap.to_string(),
            self.channel_period.to_string(),
            self.spade_hidden.to_string(),
            self.warm_start.to_string(),
            self.seed.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_gp", self.lambda_gp),
            ("alpha_rec", self.alpha_rec),
            ("alpha_sem", self.alpha_sem),
            ("sigma_base", self.sigma_base),
            ("c_rec", self.c_rec),
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::Config("scale_factor must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.channel_base == 0 || self.channel_cap < self.channel_base || self.channel_period == 0 {
            return Err(Error::Config("channel schedule needs 0 < base <= cap and period >= 1".into()));
        }
        if let CropSetting::Window(w) = self.crop {
            if w < crate::networks::RF {
                return Err(Error::Config(format!("crop window {w} below the receptive field")));
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            schedule: ChannelSchedule {
                base: self.channel_base,
                cap: self.channel_cap,
                period: self.channel_period,
            },
            spade_hidden: (self.spade_hidden > 0).then_some(self.spade_hidden),
        }
    }

    pub fn crop_window(&self) -> Option<usize> {
        self.crop.resolve(self.max_dim)
    }
}
