use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a slot description reaches the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Description drives generated key/value prefixes in every encoder layer.
    #[serde(rename = "prompter")]
    Prompter,
    /// Description tokens are concatenated in front of the dialogue context.
    #[serde(rename = "baseline")]
    HardPrompt,
    /// The generated slot prompt is prepended to the encoder input embeddings.
    #[serde(rename = "prompt-tuning")]
    PromptTuning,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Prompter => "prompter",
            Mode::HardPrompt => "baseline",
            Mode::PromptTuning => "prompt-tuning",
        }
    }

    /// Whether the model owns slot-prompt parameters (global prompt and
    /// description cross-attention).
    pub fn has_slot_prompt(self) -> bool {
        matches!(self, Mode::Prompter | Mode::PromptTuning)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompter" => Ok(Mode::Prompter),
            "baseline" | "hard-prompt" => Ok(Mode::HardPrompt),
            "prompt-tuning" => Ok(Mode::PromptTuning),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Rows of the global prompt, slot prompt and every prefix.
    pub prompt_len: usize,
    /// Width of the prefix generators' down/up projection.
    pub bottleneck: usize,
    pub mode: Mode,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            enc_layers: 4,
            dec_layers: 4,
            d_ff: 128,
            vocab_size: 512,
            max_len: 256,
            prompt_len: 10,
            bottleneck: 16,
            mode: Mode::Prompter,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration used by the gradient checker.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            d_model: 8,
            n_heads: 2,
            enc_layers: 2,
            dec_layers: 2,
            d_ff: 16,
            vocab_size,
            max_len: 16,
            prompt_len: 2,
            bottleneck: 2,
            mode: Mode::Prompter,
            norm_eps: 1e-6,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.enc_layers < 2 || self.dec_layers < 2 {
            return fail(format!(
                "need at least 2 encoder and decoder layers, got {} and {}",
                self.enc_layers, self.dec_layers
            ));
        }
        if self.prompt_len == 0 {
            return fail("prompt_len must be at least 1".into());
        }
        if self.bottleneck == 0 {
            return fail("bottleneck must be at least 1".into());
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return fail("d_ff and max_len must be positive".into());
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive".into());
        }
        if !(self.norm_eps >= 0.0) {
            return fail("norm_eps must be non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_toy_setup() {
        let c = ModelConfig::default();
        assert_eq!(c.prompt_len, 10);
        assert_eq!(c.bottleneck, c.d_model / 4);
        assert_eq!(c.head_dim(), 16);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let bad_heads = ModelConfig { n_heads: 3, ..Default::default() };
        assert!(bad_heads.validate().is_err());
        let shallow = ModelConfig { enc_layers: 1, ..Default::default() };
        assert!(shallow.validate().is_err());
        let no_prompt = ModelConfig { prompt_len: 0, ..Default::default() };
        assert!(no_prompt.validate().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Prompter, Mode::HardPrompt, Mode::PromptTuning] {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("bogus".parse::<Mode>().is_err());
    }
}
