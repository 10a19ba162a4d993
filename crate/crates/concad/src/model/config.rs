//! Architecture configuration.
//!
//! Extractor stacks are written in a compact block notation, e.g.
//!
//! ```text
//! ConvBlock(64,100,20)-MaxPool(2)-Dropout(0.5)-ConvBlock(64,8,4)-MaxPool(2)-Dropout(0.5)-ConvBlock(128,4,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(128,4,2)
//! ```
//!
//! `ConvBlock(filters, kernel, stride)` is a convolution + batch norm +
//! ReLU; `MaxPool(p)` and `Dropout(rate)` attach to the preceding block.
//! The final block must carry neither pool nor dropout.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: Option<usize>,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorSpec {
    pub blocks: Vec<ConvBlockSpec>,
}

impl ExtractorSpec {
    /// Parse the block notation. Empty segments (doubled dashes) are
    /// tolerated.
    pub fn parse(notation: &str) -> Result<ExtractorSpec> {
        let mut blocks: Vec<ConvBlockSpec> = Vec::new();
        for token in notation.split('-').map(str::trim).filter(|t| !t.is_empty()) {
            let (name, args) = split_call(token)?;
            match name {
                "ConvBlock" => {
                    if args.len() != 3 {
                        return Err(Error::Config(format!(
                            "ConvBlock expects (filters, kernel, stride): `{token}`"
                        )));
                    }
                    blocks.push(ConvBlockSpec {
                        filters: parse_usize(&args[0], token)?,
                        kernel: parse_usize(&args[1], token)?,
                        stride: parse_usize(&args[2], token)?,
                        pool: None,
                        dropout: 0.0,
                    });
                }
                "MaxPool" => {
                    let block = blocks.last_mut().ok_or_else(|| {
                        Error::Config(format!("MaxPool before any ConvBlock: `{notation}`"))
                    })?;
                    if block.pool.is_some() {
                        return Err(Error::Config(format!(
                            "two MaxPool on one block: `{notation}`"
                        )));
                    }
                    if args.len() != 1 {
                        return Err(Error::Config(format!("MaxPool expects (p): `{token}`")));
                    }
                    block.pool = Some(parse_usize(&args[0], token)?);
                }
                "Dropout" => {
                    let block = blocks.last_mut().ok_or_else(|| {
                        Error::Config(format!("Dropout before any ConvBlock: `{notation}`"))
                    })?;
                    if args.len() != 1 {
                        return Err(Error::Config(format!("Dropout expects (rate): `{token}`")));
                    }
                    block.dropout = args[0]
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad dropout rate in `{token}`")))?;
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown layer `{other}` in `{notation}`"
                    )))
                }
            }
        }
        let spec = ExtractorSpec { blocks };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("extractor needs at least one block".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(Error::Config(format!(
                    "block {i}: filters/kernel/stride must be >= 1"
                )));
            }
            if !(0.0..1.0).contains(&b.dropout) {
                return Err(Error::Config(format!(
                    "block {i}: dropout {} outside [0, 1)",
                    b.dropout
                )));
            }
            if b.pool == Some(0) {
                return Err(Error::Config(format!("block {i}: pool must be >= 1")));
            }
        }
        let last = self.blocks.last().unwrap();
        if last.pool.is_some() || last.dropout != 0.0 {
            return Err(Error::Config(
                "final extractor block must carry neither pool nor dropout".into(),
            ));
        }
        Ok(())
    }

    /// Output `(time, channels)` after the full stack, tracking the valid
    /// shrinkage through every block. Errors name the block that exhausts
    /// the time axis.
    pub fn output_shape(&self, input_len: usize) -> Result<(usize, usize)> {
        let mut t = input_len;
        for (i, b) in self.blocks.iter().enumerate() {
            if t < b.kernel {
                return Err(Error::Config(format!(
                    "block {i} (kernel {}) exhausts the time axis: {} samples left of {}",
                    b.kernel, t, input_len
                )));
            }
            t = (t - b.kernel) / b.stride + 1;
            if let Some(p) = b.pool {
                if t < p {
                    return Err(Error::Config(format!(
                        "block {i} pool {} exhausts the time axis: {} samples left of {}",
                        p, t, input_len
                    )));
                }
                t /= p;
            }
        }
        Ok((t, self.blocks.last().unwrap().filters))
    }

    /// Render back to block notation (round-trips through `parse`).
    pub fn notation(&self) -> String {
        let mut parts = Vec::new();
        for b in &self.blocks {
            parts.push(format!("ConvBlock({},{},{})", b.filters, b.kernel, b.stride));
            if let Some(p) = b.pool {
                parts.push(format!("MaxPool({p})"));
            }
            if b.dropout > 0.0 {
                parts.push(format!("Dropout({})", b.dropout));
            }
        }
        parts.join("-")
    }
}

fn split_call(token: &str) -> Result<(&str, Vec<String>)> {
    let open = token
        .find('(')
        .ok_or_else(|| Error::Config(format!("expected `Name(args)`, got `{token}`")))?;
    if !token.ends_with(')') {
        return Err(Error::Config(format!("unbalanced parens in `{token}`")));
    }
    let name = &token[..open];
    let args = token[open + 1..token.len() - 1]
        .split(',')
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    Ok((name, args))
}

fn parse_usize(s: &str, ctx: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::Config(format!("bad integer `{s}` in `{ctx}`")))
}

/// Full architecture: per-modality extractors, attention width, head sizes,
/// and the expected input lengths (the attention's time-pooling vectors are
/// sized from them).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub ecg_len: usize,
    pub rri_len: usize,
    pub ecg: ExtractorSpec,
    pub rri: ExtractorSpec,
    pub rpe: ExtractorSpec,
    /// Shared attention dimension k.
    pub attention_dim: usize,
    pub proj_dim: usize,
    pub clf_hidden: Vec<usize>,
    pub n_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelConfigToml {
    ecg_len: usize,
    rri_len: usize,
    ecg_blocks: String,
    rri_blocks: String,
    rpe_blocks: String,
    attention_dim: usize,
    proj_dim: usize,
    clf_hidden: Vec<usize>,
    #[serde(default = "default_classes")]
    n_classes: usize,
}

fn default_classes() -> usize {
    2
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.ecg.validate()?;
        self.rri.validate()?;
        self.rpe.validate()?;
        if self.attention_dim == 0 || self.proj_dim == 0 {
            return Err(Error::Config(
                "attention_dim and proj_dim must be >= 1".into(),
            ));
        }
        if self.n_classes != 2 {
            return Err(Error::Config("only binary classification is supported".into()));
        }
        // Surface time-axis exhaustion now rather than at init.
        self.ecg.output_shape(self.ecg_len)?;
        self.rri.output_shape(self.rri_len)?;
        self.rpe.output_shape(self.rri_len)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<ModelConfig> {
        let raw: ModelConfigToml =
            toml::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        let cfg = ModelConfig {
            ecg_len: raw.ecg_len,
            rri_len: raw.rri_len,
            ecg: ExtractorSpec::parse(&raw.ecg_blocks)?,
            rri: ExtractorSpec::parse(&raw.rri_blocks)?,
            rpe: ExtractorSpec::parse(&raw.rpe_blocks)?,
            attention_dim: raw.attention_dim,
            proj_dim: raw.proj_dim,
            clf_hidden: raw.clf_hidden,
            n_classes: raw.n_classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let raw = ModelConfigToml {
            ecg_len: self.ecg_len,
            rri_len: self.rri_len,
            ecg_blocks: self.ecg.notation(),
            rri_blocks: self.rri.notation(),
            rpe_blocks: self.rpe.notation(),
            attention_dim: self.attention_dim,
            proj_dim: self.proj_dim,
            clf_hidden: self.clf_hidden.clone(),
            n_classes: self.n_classes,
        };
        toml::to_string(&raw).expect("model config serializes")
    }

    /// Full-scale stack for 100 Hz ECG minute epochs with the given
    /// context width (window = (2*context+1) epochs, RRI/RPE at 180
    /// points per epoch).
    pub fn apnea_ecg(context: usize) -> ModelConfig {
        let epochs = 2 * context + 1;
        ModelConfig {
            ecg_len: epochs * 6000,
            rri_len: epochs * 180,
            ecg: ExtractorSpec::parse(
                "ConvBlock(64,100,20)-MaxPool(2)-Dropout(0.5)-ConvBlock(64,8,4)-MaxPool(2)-Dropout(0.5)-ConvBlock(128,4,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(128,4,2)",
            )
            .unwrap(),
            rri: Self::expert_spec(),
            rpe: Self::expert_spec(),
            attention_dim: 64,
            proj_dim: 32,
            clf_hidden: vec![64],
            n_classes: 2,
        }
    }

    /// Full-scale stack for 250 Hz ECG with 30 s epochs and the given
    /// context width (RRI/RPE at 90 points per epoch). With valid
    /// padding this stack needs context >= 1; at context 0 the final
    /// block exhausts the time axis and `validate` reports it.
    pub fn mit_psg(context: usize) -> ModelConfig {
        let epochs = 2 * context + 1;
        ModelConfig {
            ecg_len: epochs * 7500,
            rri_len: epochs * 90,
            ecg: ExtractorSpec::parse(
                "ConvBlock(64,60,5)-MaxPool(2)-Dropout(0.5)-ConvBlock(128,8,3)-ConvBlock(128,8,3)-MaxPool(2)-Dropout(0.5)-ConvBlock(256,4,2)-ConvBlock(256,4,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(128,4,1)-ConvBlock(128,4,1)",
            )
            .unwrap(),
            rri: Self::expert_spec(),
            rpe: Self::expert_spec(),
            attention_dim: 64,
            proj_dim: 32,
            clf_hidden: vec![64],
            n_classes: 2,
        }
    }

    fn expert_spec() -> ExtractorSpec {
        ExtractorSpec::parse(
            "ConvBlock(64,8,4)-MaxPool(2)-Dropout(0.5)-ConvBlock(64,4,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(128,2,1)-MaxPool(2)-Dropout(0.5)-ConvBlock(128,2,1)",
        )
        .unwrap()
    }

    /// Small stack for the 30 s / 100 Hz synthetic dataset; trains on a
    /// laptop core in seconds.
    pub fn synthetic() -> ModelConfig {
        ModelConfig {
            ecg_len: 3000,
            rri_len: 90,
            ecg: ExtractorSpec::parse(
                "ConvBlock(8,50,10)-MaxPool(2)-Dropout(0.5)-ConvBlock(8,5,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(16,3,1)",
            )
            .unwrap(),
            rri: ExtractorSpec::parse(
                "ConvBlock(8,5,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(16,3,1)",
            )
            .unwrap(),
            rpe: ExtractorSpec::parse(
                "ConvBlock(8,5,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(16,3,1)",
            )
            .unwrap(),
            attention_dim: 16,
            proj_dim: 8,
            clf_hidden: vec![16],
            n_classes: 2,
        }
    }

    /// Tiny stack for finite-difference sweeps over every parameter.
    pub fn toy() -> ModelConfig {
        ModelConfig {
            ecg_len: 120,
            rri_len: 24,
            ecg: ExtractorSpec::parse(
                "ConvBlock(3,10,5)-MaxPool(2)-Dropout(0.5)-ConvBlock(4,3,1)",
            )
            .unwrap(),
            rri: ExtractorSpec::parse("ConvBlock(3,4,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(4,2,1)")
                .unwrap(),
            rpe: ExtractorSpec::parse("ConvBlock(3,4,2)-MaxPool(2)-Dropout(0.5)-ConvBlock(4,2,1)")
                .unwrap(),
            attention_dim: 6,
            proj_dim: 4,
            clf_hidden: vec![5],
            n_classes: 2,
        }
    }
}
