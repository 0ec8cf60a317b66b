//! Run configuration: TOML parsing, validation with line-precise
//! diagnostics, CLI overrides, and the self-describing metadata block
//! that every output file carries.

use std::ops::Range;
use std::path::PathBuf;

use clsid_core::csvio::Metadata;
use clsid_core::estimators::{default_floor, EstimatorOptions};
use clsid_core::lti::{ClosedLoopSystem, TransferFunction};
use clsid_core::mc::{EstimatorKind, McConfig, Pairing, SEED_SCHEME};
use clsid_core::signals::{prbs, ExcitationSignal};
use clsid_core::sim::{Excitation, NoiseDistribution, DEFAULT_SETTLE_PERIODS};
use clsid_core::variance::DEFAULT_TAIL_TOL;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::Spanned;

/// The benchmark study, shipped with the binary.
pub const PAPER_CFG: &str = include_str!("../paper.cfg");

const DEFAULT_RUNS: usize = 2000;
const DEFAULT_THRESHOLD: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
#[error("{origin}:{line}: {message}")]
pub struct ConfigError {
    pub origin: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTf {
    num: Spanned<Vec<f64>>,
    den: Spanned<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    plant: Spanned<RawTf>,
    controller: Spanned<RawTf>,
    noise_model: Spanned<RawTf>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ExcitationKindCfg {
    Prbs,
    Custom,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ChannelCfg {
    R1,
    #[default]
    R2,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExcitation {
    kind: ExcitationKindCfg,
    register_length: Option<Spanned<u32>>,
    amplitude: Option<Spanned<f64>>,
    seed: Option<Spanned<u32>>,
    #[serde(default)]
    channel: ChannelCfg,
    samples: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    sigma: Spanned<f64>,
    distribution: Option<Spanned<String>>,
    base_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    runs: Option<Spanned<usize>>,
    pairing: Option<Spanned<String>>,
    threshold: Option<Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    excitation: Spanned<RawExcitation>,
    noise: Spanned<RawNoise>,
    #[serde(default)]
    mc: RawMc,
    estimators: Option<Spanned<Vec<Spanned<String>>>>,
    settle_periods: Option<Spanned<usize>>,
    output_dir: Option<String>,
    floor: Option<Spanned<f64>>,
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub runs: Option<usize>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ExcitationCfg {
    pub kind: ExcitationKindCfg,
    pub register_length: u32,
    pub amplitude: f64,
    pub seed: u32,
    pub channel: ChannelCfg,
    pub signal: ExcitationSignal,
}

impl ExcitationCfg {
    pub fn routed(&self) -> Excitation {
        match self.channel {
            ChannelCfg::R1 => Excitation::on_r1(self.signal.clone()),
            ChannelCfg::R2 => Excitation::on_r2(self.signal.clone()),
        }
    }
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: ClosedLoopSystem,
    pub excitation: ExcitationCfg,
    pub sigma: f64,
    pub distribution: NoiseDistribution,
    pub base_seed: u64,
    pub runs: usize,
    pub pairing: Pairing,
    pub threshold: f64,
    pub estimators: Vec<EstimatorKind>,
    pub settle_periods: usize,
    pub floor: f64,
    pub output_dir: PathBuf,
}

struct Ctx<'a> {
    origin: &'a str,
    text: &'a str,
}

impl Ctx<'_> {
    fn line_of(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())]
            .matches('\n')
            .count()
            + 1
    }

    fn err(&self, span: Range<usize>, message: impl Into<String>) -> LoadError {
        LoadError::Config(ConfigError {
            origin: self.origin.to_string(),
            line: self.line_of(span.start),
            message: message.into(),
        })
    }

    fn tf(&self, name: &str, raw: &Spanned<RawTf>) -> Result<TransferFunction, LoadError> {
        let tf = raw.get_ref();
        let (num, den) = (&tf.num, &tf.den);
        if num.get_ref().is_empty() {
            return Err(self.err(num.span(), format!("system.{name}.num must not be empty")));
        }
        if den.get_ref().is_empty() {
            return Err(self.err(den.span(), format!("system.{name}.den must not be empty")));
        }
        if den.get_ref()[0] == 0.0 {
            return Err(self.err(den.span(), format!("system.{name}.den[0] must be nonzero")));
        }
        for (field, c) in [("num", num), ("den", den)] {
            if c.get_ref().iter().any(|v| !v.is_finite()) {
                return Err(self.err(
                    c.span(),
                    format!("system.{name}.{field} has a non-finite coefficient"),
                ));
            }
        }
        TransferFunction::new(num.get_ref().clone(), den.get_ref().clone())
            .map_err(|e| self.err(raw.span(), format!("system.{name}: {e}")))
    }
}

impl RunConfig {
    /// Parses and validates `text`; `origin` names the source in diagnostics.
    ///
    /// The loop is assembled last, so a well-formed file describing an
    /// unstable or ill-posed loop yields [`LoadError::System`].
    pub fn parse(text: &str, origin: &str, overrides: &Overrides) -> Result<Self, LoadError> {
        let ctx = Ctx { origin, text };
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
            origin: origin.to_string(),
            line: e.span().map_or(1, |s| ctx.line_of(s.start)),
            message: e.message().to_string(),
        })?;

        let plant = ctx.tf("plant", &raw.system.plant)?;
        let controller = ctx.tf("controller", &raw.system.controller)?;
        let noise_model = ctx.tf("noise_model", &raw.system.noise_model)?;

        let ex = raw.excitation.get_ref();
        let amplitude = match &ex.amplitude {
            Some(a) if !(a.get_ref().is_finite() && *a.get_ref() > 0.0) => {
                return Err(ctx.err(a.span(), "excitation.amplitude must be positive"));
            }
            Some(a) => *a.get_ref(),
            None => 1.0,
        };
        let register_length = ex.register_length.as_ref().map_or(7, |s| *s.get_ref());
        let seed = ex.seed.as_ref().map_or(1, |s| *s.get_ref());
        let signal = match ex.kind {
            ExcitationKindCfg::Prbs => {
                if let Some(s) = &ex.samples {
                    return Err(ctx.err(
                        s.span(),
                        "excitation.samples is only valid with kind = \"custom\"",
                    ));
                }
                let span = ex
                    .register_length
                    .as_ref()
                    .map_or(raw.excitation.span(), |s| s.span());
                if !(2..=16).contains(&register_length) {
                    return Err(ctx.err(span, "excitation.register_length must be in 2..=16"));
                }
                let span = ex.seed.as_ref().map_or(raw.excitation.span(), |s| s.span());
                if seed & ((1 << register_length) - 1) == 0 {
                    return Err(ctx.err(span, "excitation.seed leaves the shift register all zero"));
                }
                prbs(register_length, amplitude, seed).map_err(|e| ctx.err(span, e.to_string()))?
            }
            ExcitationKindCfg::Custom => {
                let Some(s) = &ex.samples else {
                    return Err(ctx.err(
                        raw.excitation.span(),
                        "excitation.samples is required with kind = \"custom\"",
                    ));
                };
                ExcitationSignal::custom(s.get_ref().iter().map(|v| v * amplitude).collect())
                    .map_err(|e| ctx.err(s.span(), format!("excitation.samples: {e}")))?
            }
        };

        let noise = raw.noise.get_ref();
        let sigma = overrides.sigma.unwrap_or(*noise.sigma.get_ref());
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(ctx.err(noise.sigma.span(), "noise.sigma must be finite and >= 0"));
        }
        let distribution = match &noise.distribution {
            Some(d) => d
                .get_ref()
                .parse()
                .map_err(|e: clsid_core::Error| ctx.err(d.span(), e.to_string()))?,
            None => NoiseDistribution::Gaussian,
        };
        let base_seed = overrides.seed.or(noise.base_seed).unwrap_or(0);

        let estimators = match &raw.estimators {
            Some(list) => {
                if list.get_ref().is_empty() {
                    return Err(ctx.err(list.span(), "estimators must not be empty"));
                }
                list.get_ref()
                    .iter()
                    .map(|s| {
                        s.get_ref()
                            .parse()
                            .map_err(|e: clsid_core::Error| ctx.err(s.span(), e.to_string()))
                    })
                    .collect::<Result<Vec<EstimatorKind>, _>>()?
            }
            None => vec![EstimatorKind::Direct, EstimatorKind::JointIoTwoExp],
        };

        let runs = overrides
            .runs
            .or(raw.mc.runs.as_ref().map(|r| *r.get_ref()))
            .unwrap_or(DEFAULT_RUNS);
        if runs < 2 {
            let span = raw.mc.runs.as_ref().map_or(0..0, |r| r.span());
            return Err(ctx.err(span, "mc.runs must be at least 2"));
        }
        let pairing = match &raw.mc.pairing {
            Some(p) => {
                let pairing: Pairing = p
                    .get_ref()
                    .parse()
                    .map_err(|e: clsid_core::Error| ctx.err(p.span(), e.to_string()))?;
                if let Some(k) = estimators
                    .iter()
                    .find(|k| k.experiments_required() > pairing.experiments())
                {
                    return Err(ctx.err(
                        p.span(),
                        format!(
                            "mc.pairing `{}` cannot feed estimator `{}`",
                            p.get_ref(),
                            k.as_str()
                        ),
                    ));
                }
                pairing
            }
            None => Pairing::minimal_for(&estimators),
        };
        let threshold = match &raw.mc.threshold {
            Some(t) if !(t.get_ref().is_finite() && *t.get_ref() > 0.0) => {
                return Err(ctx.err(t.span(), "mc.threshold must be positive"));
            }
            Some(t) => *t.get_ref(),
            None => DEFAULT_THRESHOLD,
        };

        let settle_periods = match &raw.settle_periods {
            Some(s) if *s.get_ref() == 0 => {
                return Err(ctx.err(s.span(), "settle_periods must be at least 1"))
            }
            Some(s) => *s.get_ref(),
            None => DEFAULT_SETTLE_PERIODS,
        };
        let floor = match &raw.floor {
            Some(f) if !(f.get_ref().is_finite() && *f.get_ref() >= 0.0) => {
                return Err(ctx.err(f.span(), "floor must be finite and >= 0"));
            }
            Some(f) => *f.get_ref(),
            None => default_floor(signal.period()),
        };
        let output_dir = overrides
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(raw.output_dir.unwrap_or_else(|| "out".into())));

        Ok(RunConfig {
            system: ClosedLoopSystem::new(plant, controller, noise_model)
                .map_err(LoadError::System)?,
            excitation: ExcitationCfg {
                kind: ex.kind,
                register_length,
                amplitude,
                seed,
                channel: ex.channel,
                signal,
            },
            sigma,
            distribution,
            base_seed,
            runs,
            pairing,
            threshold,
            estimators,
            settle_periods,
            floor,
            output_dir,
        })
    }

    pub fn estimator_options(&self) -> EstimatorOptions {
        EstimatorOptions {
            floor: Some(self.floor),
        }
    }

    pub fn mc_config(&self, estimators: Vec<EstimatorKind>, pairing: Pairing) -> McConfig {
        McConfig {
            runs: self.runs,
            sigma: self.sigma,
            base_seed: self.base_seed,
            distribution: self.distribution,
            estimators,
            pairing,
            options: self.estimator_options(),
        }
    }

    pub fn n(&self) -> usize {
        self.excitation.signal.period()
    }

    /// Every effective setting, defaults included. The output directory is
    /// left out so relocating outputs does not change the hash.
    pub fn resolved(&self) -> Metadata {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let mut md = Metadata::new();
        for (name, tf) in [
            ("plant", self.system.plant()),
            ("controller", self.system.controller()),
            ("noise_model", self.system.noise_model()),
        ] {
            md.push(format!("system.{name}.num"), join(tf.num()));
            md.push(format!("system.{name}.den"), join(tf.den()));
        }
        let ex = &self.excitation;
        md.push(
            "excitation.kind",
            if ex.kind == ExcitationKindCfg::Prbs {
                "prbs"
            } else {
                "custom"
            },
        );
        if ex.kind == ExcitationKindCfg::Prbs {
            md.push("excitation.register_length", ex.register_length);
            md.push("excitation.seed", ex.seed);
        } else {
            md.push("excitation.samples", join(ex.signal.samples()));
        }
        md.push("excitation.amplitude", ex.amplitude);
        md.push(
            "excitation.channel",
            if ex.channel == ChannelCfg::R1 {
                "r1"
            } else {
                "r2"
            },
        );
        md.push("N", self.n());
        md.push("noise.sigma", self.sigma);
        md.push("noise.distribution", self.distribution.as_str());
        md.push("noise.base_seed", self.base_seed);
        md.push("mc.runs", self.runs);
        md.push("mc.pairing", self.pairing.as_str());
        md.push("mc.threshold", self.threshold);
        md.push("mc.seed_scheme", SEED_SCHEME);
        md.push(
            "estimators",
            self.estimators
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        );
        md.push("settle_periods", self.settle_periods);
        md.push("floor", self.floor);
        md.push("tail_tol", DEFAULT_TAIL_TOL);
        md
    }

    /// SHA-256 of the resolved settings.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.resolved().iter() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Header block for output files: hash first, then all settings.
    pub fn metadata(&self) -> Metadata {
        let mut md = Metadata::new().with("config_hash", self.hash());
        md.extend(&self.resolved());
        md
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// The file is valid but the loop it describes is not usable.
    #[error("{0}")]
    System(clsid_core::Error),
}
