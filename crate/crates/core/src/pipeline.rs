//! Named component selections and an owned pipeline built from them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    make_schedule, Codec, Denoiser, IdentityCodec, LinearDenoiser, NoiseSchedule, PoolCodec, SmoothingDenoiser,
    ZeroDenoiser,
};
use crate::features::{Extractor, IdentityExtractor, PyramidExtractor};
use crate::geometry::feature_dims;
use crate::lro::{Components, Result};
use crate::scalar::Scalar;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            #[default]
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} '{}' (expected one of: {})",
                        stringify!($name),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

named_enum!(DenoiserKind { Zero => "zero", Linear => "linear", Smoothing => "smoothing" });
named_enum!(ExtractorKind { Pyramid => "pyramid", Identity => "identity" });
named_enum!(CodecKind { Identity => "identity", Pool => "pool" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentSelection {
    pub codec: CodecKind,
    pub denoiser: DenoiserKind,
    pub extractor: ExtractorKind,
}

/// Owned components sized for one image.
pub struct Pipeline<T> {
    pub denoiser: Box<dyn Denoiser<T>>,
    pub extractor: Box<dyn Extractor<T>>,
    pub codec: Box<dyn Codec<T>>,
    pub noise: NoiseSchedule<T>,
}

impl<T: Scalar> Pipeline<T> {
    pub fn build(sel: ComponentSelection, width: usize, height: usize, t_max: usize) -> Result<Self> {
        let denoiser: Box<dyn Denoiser<T>> = match sel.denoiser {
            DenoiserKind::Zero => Box::new(ZeroDenoiser),
            DenoiserKind::Linear => Box::new(LinearDenoiser::default()),
            DenoiserKind::Smoothing => Box::new(SmoothingDenoiser::default()),
        };
        let codec: Box<dyn Codec<T>> = match sel.codec {
            CodecKind::Identity => Box::new(IdentityCodec),
            CodecKind::Pool => Box::new(PoolCodec::with_output(width, height)),
        };
        let latent = codec.latent_dims(width, height);
        let (fw, fh) = feature_dims(width, height);
        let extractor: Box<dyn Extractor<T>> = match sel.extractor {
            ExtractorKind::Identity => Box::new(IdentityExtractor::new(latent, (fh, fw))),
            ExtractorKind::Pyramid => Box::new(PyramidExtractor::new(latent, (fh, fw))),
        };
        Ok(Self {
            denoiser,
            extractor,
            codec,
            noise: make_schedule(t_max, BETA_START, BETA_END)?,
        })
    }

    pub fn components(&self) -> Components<'_, T> {
        Components {
            denoiser: self.denoiser.as_ref(),
            extractor: self.extractor.as_ref(),
            codec: self.codec.as_ref(),
            noise: &self.noise,
        }
    }
}
