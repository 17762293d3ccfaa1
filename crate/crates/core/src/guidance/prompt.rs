use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::ShadingMode;

pub const DEFAULT_IDENTIFIER: &str = "sks";

/// Identifier token, subject class and caption used to build text prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    identifier: String,
    class_name: String,
    caption: String,
}

impl PromptSpec {
    pub fn new(
        identifier: impl Into<String>,
        class_name: impl Into<String>,
        caption: impl Into<String>,
    ) -> Result<Self> {
        let identifier = identifier.into();
        let class_name = class_name.into();
        if identifier.is_empty() || identifier.chars().any(char::is_whitespace) {
            return Err(Error::InvalidInput(format!(
                "prompt identifier must be a single non-empty token, got `{identifier}`"
            )));
        }
        if class_name.trim().is_empty() {
            return Err(Error::InvalidInput("prompt class name must be non-empty".into()));
        }
        Ok(Self {
            identifier,
            class_name,
            caption: caption.into(),
        })
    }

    pub fn with_default_identifier(
        class_name: impl Into<String>,
        caption: impl Into<String>,
    ) -> Result<Self> {
        Self::new(DEFAULT_IDENTIFIER, class_name, caption)
    }

    pub fn identifier(&self) -> &str {
        &self.identifier
    }

    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn caption(&self) -> &str {
        &self.caption
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Depth,
    Normal,
    Mask,
    Rgb,
}

impl Modality {
    pub fn token(self) -> &'static str {
        match self {
            Modality::Depth => "depth",
            Modality::Normal => "normal",
            Modality::Mask => "mask",
            Modality::Rgb => "rgb",
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            Modality::Depth => "depth map",
            Modality::Normal => "normal map",
            Modality::Mask => "foreground mask",
            Modality::Rgb => "rgb photo",
        }
    }
}

impl From<ShadingMode> for Modality {
    fn from(m: ShadingMode) -> Self {
        match m {
            ShadingMode::Albedo => Modality::Rgb,
            ShadingMode::Normal => Modality::Normal,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(Modality::Depth),
            "normal" => Ok(Modality::Normal),
            "mask" => Ok(Modality::Mask),
            "rgb" => Ok(Modality::Rgb),
            other => Err(Error::InvalidInput(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Subject fine-tuning prompts, one per input modality.
    Finetune,
    /// Novel-view guidance prompts matched to the render's shading mode.
    Shading,
}

impl Purpose {
    fn token(self) -> &'static str {
        match self {
            Purpose::Finetune => "finetune",
            Purpose::Shading => "shading",
        }
    }
}

pub fn build_prompt(spec: &PromptSpec, modality: Modality, purpose: Purpose) -> Result<String> {
    match purpose {
        Purpose::Finetune => Ok(format!(
            "a {} of {} {}",
            modality.phrase(),
            spec.identifier,
            spec.class_name
        )),
        Purpose::Shading => match modality {
            Modality::Normal | Modality::Rgb => Ok(format!(
                "{} {} of {}",
                spec.identifier,
                modality.phrase(),
                spec.caption
            )),
            Modality::Depth | Modality::Mask => Err(Error::InvalidModality {
                modality: modality.token(),
                purpose: purpose.token(),
            }),
        },
    }
}

/// Shading prompt for a render produced in `mode`.
pub fn shading_prompt(spec: &PromptSpec, mode: ShadingMode) -> String {
    build_prompt(spec, mode.into(), Purpose::Shading).expect("shading modes map to valid modalities")
}
