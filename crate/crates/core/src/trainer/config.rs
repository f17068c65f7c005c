//! Run configuration: a flat `key = value` text format, validated before any
//! compute and echoed verbatim into every artifact. Unknown keys are errors.

use std::path::PathBuf;

use crate::data::Freq;
use crate::error::{Error, Result};

/// Everything one run needs. Defaults follow the paper-scale setup; the
/// synthetic-experiment configs override the model size explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// CSV input path; alternative to an inline synthetic spec.
    pub data: Option<PathBuf>,
    pub date_col: Option<String>,
    pub value_cols: Option<Vec<String>>,

    pub synth_length: Option<usize>,
    /// Sinusoid components as `(period, amplitude)` pairs.
    pub synth_components: Vec<(f64, f64)>,
    pub synth_trend: f64,
    pub synth_noise: f64,
    pub synth_seed: u64,

    pub input_len: usize,
    pub output_len: usize,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub lambda: f64,
    pub tau: f64,
    /// ACF pre-smoothing kernel; `None` picks the frequency default.
    pub smoothing_k: Option<usize>,
    pub kernels: Vec<usize>,
    pub repr_dim: usize,
    pub depth: usize,
    pub seed: u64,
    pub no_short: bool,
    pub no_long: bool,
    pub no_autocon: bool,
    pub ratios: [f64; 3],
    /// Period used for sine/cosine index features on clockless series.
    pub long_period_hint: f64,
    /// Anchor window start for the representation-similarity dump; `None`
    /// uses the first window of the probed split.
    pub anchor: Option<usize>,
    /// Smoothing kernel for the representation-similarity dump.
    pub repr_smooth_k: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            date_col: None,
            value_cols: None,
            synth_length: None,
            synth_components: Vec::new(),
            synth_trend: 0.0,
            synth_noise: 0.0,
            synth_seed: 0,
            input_len: 96,
            output_len: 720,
            batch: 32,
            epochs: 10,
            patience: 3,
            lr: 1e-3,
            lambda: 0.1,
            tau: 1.0,
            smoothing_k: None,
            kernels: vec![25, 49, 97],
            repr_dim: 64,
            depth: 3,
            seed: 0,
            no_short: false,
            no_long: false,
            no_autocon: false,
            ratios: [6.0, 2.0, 2.0],
            long_period_hint: 1000.0,
            anchor: None,
            repr_smooth_k: 25,
            out_dir: PathBuf::from("run-out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{v}' for key '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("cannot parse '{other}' as bool for '{key}'"))),
    }
}

fn parse_components(v: &str) -> Result<Vec<(f64, f64)>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|pair| {
            let (p, a) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("component '{pair}' is not 'period:amp'")))?;
            Ok((parse_num("synth_components", p)?, parse_num("synth_components", a)?))
        })
        .collect()
}

fn parse_ratios(v: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = v
        .split(':')
        .map(|p| parse_num("ratios", p))
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Config(format!("ratios must be three numbers, got '{v}'"))),
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment. Shared by the file parser and
    /// the CLI flag overrides.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "date_col" => self.date_col = Some(v.to_string()),
            "value_cols" => {
                self.value_cols = Some(v.split(',').map(|s| s.trim().to_string()).collect())
            }
            "synth_length" => self.synth_length = Some(parse_num(key, v)?),
            "synth_components" => self.synth_components = parse_components(v)?,
            "synth_trend" => self.synth_trend = parse_num(key, v)?,
            "synth_noise" => self.synth_noise = parse_num(key, v)?,
            "synth_seed" => self.synth_seed = parse_num(key, v)?,
            "input_len" => self.input_len = parse_num(key, v)?,
            "output_len" => self.output_len = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "smoothing_k" => {
                let k: usize = parse_num(key, v)?;
                self.smoothing_k = if k == 0 { None } else { Some(k) };
            }
            "kernels" => {
                self.kernels = v
                    .split(',')
                    .map(|s| parse_num::<usize>(key, s))
                    .collect::<Result<_>>()?
            }
            "repr_dim" => self.repr_dim = parse_num(key, v)?,
            "depth" => self.depth = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "no_short" => self.no_short = parse_bool(key, v)?,
            "no_long" => self.no_long = parse_bool(key, v)?,
            "no_autocon" => self.no_autocon = parse_bool(key, v)?,
            "ratios" => self.ratios = parse_ratios(v)?,
            "long_period_hint" => self.long_period_hint = parse_num(key, v)?,
            "anchor" => self.anchor = Some(parse_num(key, v)?),
            "repr_smooth_k" => self.repr_smooth_k = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a whole flat config file. `#` starts a comment; blank lines
    /// are skipped; every other line must be `key = value`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('[') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", ln + 1)))?;
            cfg.apply(k.trim(), v)?;
        }
        Ok(cfg)
    }

    /// Canonical full echo: every key in a fixed order. This is the text that
    /// gets hashed and embedded into artifacts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.data {
            s.push_str(&format!("data = {}\n", d.display()));
        }
        if let Some(c) = &self.date_col {
            s.push_str(&format!("date_col = {c}\n"));
        }
        if let Some(cols) = &self.value_cols {
            s.push_str(&format!("value_cols = {}\n", cols.join(",")));
        }
        if let Some(l) = self.synth_length {
            s.push_str(&format!("synth_length = {l}\n"));
            let comps: Vec<String> =
                self.synth_components.iter().map(|(p, a)| format!("{p}:{a}")).collect();
            s.push_str(&format!("synth_components = {}\n", comps.join(",")));
            s.push_str(&format!("synth_trend = {}\n", self.synth_trend));
            s.push_str(&format!("synth_noise = {}\n", self.synth_noise));
            s.push_str(&format!("synth_seed = {}\n", self.synth_seed));
        }
        s.push_str(&format!("input_len = {}\n", self.input_len));
        s.push_str(&format!("output_len = {}\n", self.output_len));
        s.push_str(&format!("batch = {}\n", self.batch));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("patience = {}\n", self.patience));
        s.push_str(&format!("lr = {}\n", self.lr));
        s.push_str(&format!("lambda = {}\n", self.lambda));
        s.push_str(&format!("tau = {}\n", self.tau));
        s.push_str(&format!("smoothing_k = {}\n", self.smoothing_k.unwrap_or(0)));
        let kernels: Vec<String> = self.kernels.iter().map(|k| k.to_string()).collect();
        s.push_str(&format!("kernels = {}\n", kernels.join(",")));
        s.push_str(&format!("repr_dim = {}\n", self.repr_dim));
        s.push_str(&format!("depth = {}\n", self.depth));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("no_short = {}\n", self.no_short));
        s.push_str(&format!("no_long = {}\n", self.no_long));
        s.push_str(&format!("no_autocon = {}\n", self.no_autocon));
        s.push_str(&format!("ratios = {}:{}:{}\n", self.ratios[0], self.ratios[1], self.ratios[2]));
        s.push_str(&format!("long_period_hint = {}\n", self.long_period_hint));
        if let Some(a) = self.anchor {
            s.push_str(&format!("anchor = {a}\n"));
        }
        s.push_str(&format!("repr_smooth_k = {}\n", self.repr_smooth_k));
        // out_dir is where a run lands, not what it computes: keeping it out
        // of the echo lets reruns in different directories hash identically.
        s
    }

    /// FNV-1a fingerprint of the canonical echo, stamped into every artifact.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_none() && self.synth_length.is_none() {
            return Err(Error::Config("set either 'data' or a 'synth_*' spec".into()));
        }
        if self.data.is_some() && self.synth_length.is_some() {
            return Err(Error::Config("'data' and 'synth_length' are mutually exclusive".into()));
        }
        if self.input_len == 0 || self.output_len == 0 {
            return Err(Error::Config("input_len and output_len must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if let Some(k) = self.smoothing_k {
            if k % 2 == 0 {
                return Err(Error::Config(format!("smoothing_k must be odd, got {k}")));
            }
        }
        if self.no_short && self.no_long {
            return Err(Error::Config(
                "no_short and no_long together leave a mean-only model".into(),
            ));
        }
        if self.ratios.iter().any(|&r| r <= 0.0) {
            return Err(Error::Config(format!("ratios must be positive, got {:?}", self.ratios)));
        }
        if self.repr_smooth_k % 2 == 0 {
            return Err(Error::Config("repr_smooth_k must be odd".into()));
        }
        Ok(())
    }

    /// Effective frequency-resolved ACF smoothing kernel.
    pub fn smoothing_for(&self, freq: Freq) -> usize {
        self.smoothing_k.unwrap_or_else(|| freq.default_smoothing())
    }

    /// Contrastive weight after ablation flags. `no_long` removes the branch
    /// that carries the representation, so it forces the weight to zero.
    pub fn effective_lambda(&self) -> f64 {
        if self.no_autocon || self.no_long {
            0.0
        } else {
            self.lambda
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let text = "synth_length = 400\nsynth_components = 100:1.0,8:0.5\nsynth_noise = 0.1\n\
                    input_len = 24\noutput_len = 12\nbatch = 8\nlambda = 0.2\nkernels = 5,9\n\
                    out_dir = /tmp/x\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.synth_length, Some(400));
        assert_eq!(cfg.synth_components, vec![(100.0, 1.0), (8.0, 0.5)]);
        assert_eq!(cfg.kernels, vec![5, 9]);
        let echo = cfg.to_text();
        let reparsed = RunConfig::parse(&echo).unwrap();
        // out_dir is intentionally outside the echo (a run's location is not
        // part of its identity); everything else round-trips.
        let mut expect = cfg.clone();
        expect.out_dir = RunConfig::default().out_dir;
        assert_eq!(expect, reparsed, "echo must reparse to the same config");
        assert_eq!(cfg.hash(), reparsed.hash());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = RunConfig::parse("bogus_key = 3\n").unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
    }

    #[test]
    fn contradictory_ablations_rejected() {
        let mut cfg = RunConfig::default();
        cfg.synth_length = Some(100);
        cfg.no_short = true;
        cfg.no_long = true;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn no_long_disables_the_contrastive_term() {
        let mut cfg = RunConfig::default();
        cfg.lambda = 0.5;
        cfg.no_long = true;
        assert_eq!(cfg.effective_lambda(), 0.0);
        cfg.no_long = false;
        cfg.no_autocon = true;
        assert_eq!(cfg.effective_lambda(), 0.0);
        cfg.no_autocon = false;
        assert_eq!(cfg.effective_lambda(), 0.5);
    }

    #[test]
    fn hash_tracks_content() {
        let mut a = RunConfig::default();
        a.synth_length = Some(100);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cfg = RunConfig::parse("# a comment\n\nseed = 9 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }
}
