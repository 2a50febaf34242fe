//! Line-oriented `key = value` configuration covering the model sizes and
//! all training settings. A `preset` key (`paper` or `toy`) picks the base;
//! every other key overrides one field. Unknown keys are rejected with
//! their line number, and [`Config::to_text`] emits a canonical full
//! enumeration that parses back to an identical value — checkpoints embed
//! exactly that text.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{RefMode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn paper() -> Self {
        Self {
            model: ModelConfig::paper(),
            train: TrainConfig::paper(),
        }
    }

    pub fn toy() -> Self {
        Self {
            model: ModelConfig::toy(),
            train: TrainConfig::toy(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Parse(format!(
                "unknown preset `{other}` (expected paper or toy)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Parses config text. The `preset` line (anywhere in the file, at most
    /// once) selects the base; without one the paper preset is the base.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        let mut preset: Option<(usize, &str)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "line {line_no}: expected `key = value`, got `{line}`"
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if preset.is_some() {
                    return Err(Error::Parse(format!("line {line_no}: duplicate preset")));
                }
                preset = Some((line_no, value));
            } else {
                if entries.iter().any(|&(_, k, _)| k == key) {
                    return Err(Error::Parse(format!(
                        "line {line_no}: duplicate key `{key}`"
                    )));
                }
                entries.push((line_no, key, value));
            }
        }
        let mut cfg = match preset {
            Some((line_no, name)) => Self::preset(name)
                .map_err(|_| Error::Parse(format!("line {line_no}: unknown preset `{name}`")))?,
            None => Self::paper(),
        };
        for (line_no, key, value) in entries {
            cfg.apply(key, value)
                .map_err(|e| Error::Parse(format!("line {line_no}: key `{key}`: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("cannot parse `{value}`"))
        }
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "content_hidden" => m.content_hidden = num(value)?,
            "content_layers" => m.content_layers = num(value)?,
            "content_heads" => m.content_heads = num(value)?,
            "content_ff_inner" => m.content_ff_inner = num(value)?,
            "max_rel_offset" => m.max_rel_offset = num(value)?,
            "speaker_dim" => m.speaker_dim = num(value)?,
            "lstm_layers" => m.lstm_layers = num(value)?,
            "vocab_size" => m.vocab_size = num(value)?,
            "pitch_embed_dim" => m.pitch_embed_dim = num(value)?,
            "decoder_channels" => m.decoder_channels = num(value)?,
            "posterior_layers" => m.posterior_layers = num(value)?,
            "decoder_layers" => m.decoder_layers = num(value)?,
            "kernel_size" => m.kernel_size = num(value)?,
            "disc_channels" => m.disc_channels = num(value)?,
            "batch_size" => t.batch_size = num(value)?,
            "n_refs" => t.n_refs = num(value)?,
            "ref_mode" => t.ref_mode = RefMode::parse(value).map_err(|e| e.to_string())?,
            "adam_beta1" => t.adam_beta1 = num(value)?,
            "adam_beta2" => t.adam_beta2 = num(value)?,
            "adam_eps" => t.adam_eps = num(value)?,
            "base_lr" => t.base_lr = num(value)?,
            "warmup_steps" => t.warmup_steps = num(value)?,
            "lambda_adv" => t.lambda_adv = num(value)?,
            "lambda_ss" => t.lambda_ss = num(value)?,
            "seed" => t.seed = num(value)?,
            "steps" => t.steps = num(value)?,
            "checkpoint_every" => t.checkpoint_every = num(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Canonical full enumeration; `from_text(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let kv: &[(&str, String)] = &[
            ("content_hidden", m.content_hidden.to_string()),
            ("content_layers", m.content_layers.to_string()),
            ("content_heads", m.content_heads.to_string()),
            ("content_ff_inner", m.content_ff_inner.to_string()),
            ("max_rel_offset", m.max_rel_offset.to_string()),
            ("speaker_dim", m.speaker_dim.to_string()),
            ("lstm_layers", m.lstm_layers.to_string()),
            ("vocab_size", m.vocab_size.to_string()),
            ("pitch_embed_dim", m.pitch_embed_dim.to_string()),
            ("decoder_channels", m.decoder_channels.to_string()),
            ("posterior_layers", m.posterior_layers.to_string()),
            ("decoder_layers", m.decoder_layers.to_string()),
            ("kernel_size", m.kernel_size.to_string()),
            ("disc_channels", m.disc_channels.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("n_refs", t.n_refs.to_string()),
            ("ref_mode", t.ref_mode.to_string()),
            ("adam_beta1", format!("{:?}", t.adam_beta1)),
            ("adam_beta2", format!("{:?}", t.adam_beta2)),
            ("adam_eps", format!("{:e}", t.adam_eps)),
            ("base_lr", format!("{:?}", t.base_lr)),
            ("warmup_steps", t.warmup_steps.to_string()),
            ("lambda_adv", format!("{:?}", t.lambda_adv)),
            ("lambda_ss", format!("{:?}", t.lambda_ss)),
            ("seed", t.seed.to_string()),
            ("steps", t.steps.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
        ];
        for (k, v) in kv {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_differ_where_expected() {
        let paper = Config::paper();
        let toy = Config::toy();
        assert_eq!(paper.model.content_hidden, 192);
        assert_eq!(toy.model.content_hidden, 64);
        assert_eq!(toy.model.vocab_size, 16);
        assert_eq!(paper.train.warmup_steps, 4000);
        assert_eq!(toy.train.warmup_steps, 200);
        assert!(paper.validate().is_ok());
        assert!(toy.validate().is_ok());
    }

    #[test]
    fn canonical_text_round_trips_exactly() {
        for cfg in [Config::paper(), Config::toy()] {
            let parsed = Config::from_text(&cfg.to_text()).unwrap();
            assert_eq!(parsed, cfg);
        }
        let mut custom = Config::toy();
        custom.train.lambda_adv = 0.25;
        custom.train.seed = 99;
        custom.model.kernel_size = 3;
        let parsed = Config::from_text(&custom.to_text()).unwrap();
        assert_eq!(parsed, custom);
    }

    #[test]
    fn preset_line_selects_the_base_wherever_it_appears() {
        let cfg = Config::from_text("seed = 7\npreset = toy\n").unwrap();
        assert_eq!(cfg.model.content_hidden, 64);
        assert_eq!(cfg.train.seed, 7);
        let bare = Config::from_text("").unwrap();
        assert_eq!(bare, Config::paper());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# toy run\npreset = toy\n\nseed = 3 # inline comment\n";
        let cfg = Config::from_text(text).unwrap();
        assert_eq!(cfg.train.seed, 3);
    }

    #[test]
    fn errors_carry_line_numbers_and_keys() {
        let err = Config::from_text("preset = toy\nwibble = 3\n").unwrap_err();
        match err {
            Error::Parse(msg) => {
                assert!(msg.contains("line 2"), "{msg}");
                assert!(msg.contains("wibble"), "{msg}");
            }
            other => panic!("expected Parse, got {other}"),
        }

        let err = Config::from_text("batch_size = many\n").unwrap_err();
        match err {
            Error::Parse(msg) => assert!(msg.contains("line 1") && msg.contains("batch_size")),
            other => panic!("expected Parse, got {other}"),
        }

        let err = Config::from_text("seed = 1\nseed = 2\n").unwrap_err();
        match err {
            Error::Parse(msg) => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("expected Parse, got {other}"),
        }

        let err = Config::from_text("preset = huge\n").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let err = Config::from_text("just words\n").unwrap_err();
        match err {
            Error::Parse(msg) => assert!(msg.contains("line 1"), "{msg}"),
            other => panic!("expected Parse, got {other}"),
        }
    }
}
