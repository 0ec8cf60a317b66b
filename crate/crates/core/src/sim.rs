//! Sample-by-sample simulation of the feedback loop
//!
//! ```text
//!   u(k) = C(q) (r1(k) - y(k)) + r2(k)
//!   y(k) = G(q) u(k) + v(k),        v(k) = sigma H(q) e(k)
//! ```
//!
//! which in steady state gives `y = S G r + S v` and `u = S r - S C v` with
//! `r = r2 + C(q) r1`. Only the last simulated period is returned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::csvio::{parse_f64, Metadata, Table};
use crate::error::{Error, Result};
use crate::lti::{ClosedLoopSystem, Filter};
use crate::signals::{DftPlan, ExcitationSignal, Spectrum};

/// Default number of discarded periods before the recorded one.
pub const DEFAULT_SETTLE_PERIODS: usize = 50;

/// Zero-mean, unit-variance innovation laws (scaled by `sigma` afterwards).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
    Uniform,
    Laplace,
}

impl NoiseDistribution {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseDistribution::Gaussian => "gaussian",
            NoiseDistribution::Uniform => "uniform",
            NoiseDistribution::Laplace => "laplace",
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            NoiseDistribution::Gaussian => rng.sample(StandardNormal),
            NoiseDistribution::Uniform => rng.random_range(-3f64.sqrt()..3f64.sqrt()),
            NoiseDistribution::Laplace => {
                let mag: f64 = rng.sample(Exp1);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * mag * std::f64::consts::FRAC_1_SQRT_2
            }
        }
    }
}

impl std::str::FromStr for NoiseDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "uniform" => Ok(Self::Uniform),
            "laplace" => Ok(Self::Laplace),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise distribution `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub distribution: NoiseDistribution,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            distribution: NoiseDistribution::Gaussian,
            seed,
        }
    }

    pub fn noise_free() -> Self {
        Self::gaussian(0.0, 0)
    }
}

/// Exogenous inputs of the loop. Either channel may be absent.
#[derive(Debug, Clone, Default)]
pub struct Excitation {
    pub r1: Option<ExcitationSignal>,
    pub r2: Option<ExcitationSignal>,
}

impl Excitation {
    /// The usual identification setup: `r1 = 0`, probing through `r2`.
    pub fn on_r2(signal: ExcitationSignal) -> Self {
        Self {
            r1: None,
            r2: Some(signal),
        }
    }

    pub fn on_r1(signal: ExcitationSignal) -> Self {
        Self {
            r1: Some(signal),
            r2: None,
        }
    }

    pub fn period(&self) -> Result<usize> {
        match (&self.r1, &self.r2) {
            (None, None) => Err(Error::EmptyInput("excitation (both r1 and r2 absent)")),
            (Some(a), Some(b)) if a.period() != b.period() => Err(Error::InvalidArgument(format!(
                "r1 period {} differs from r2 period {}",
                a.period(),
                b.period()
            ))),
            (Some(a), _) | (None, Some(a)) => Ok(a.period()),
        }
    }
}

/// One steady-state period `(r_k, u_k, y_k)`, `k = 0..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub experiment_id: u64,
    pub distribution: NoiseDistribution,
}

impl ExperimentRecord {
    pub fn n(&self) -> usize {
        self.r.len()
    }

    /// DFTs of the three channels.
    pub fn spectra(&self) -> Result<RecordSpectra> {
        self.spectra_with(&DftPlan::new(self.n())?)
    }

    pub fn spectra_with(&self, plan: &DftPlan) -> Result<RecordSpectra> {
        Ok(RecordSpectra {
            r: plan.forward(&self.r)?,
            u: plan.forward(&self.u)?,
            y: plan.forward(&self.y)?,
            experiment_id: self.experiment_id,
        })
    }

    pub fn metadata(&self) -> Metadata {
        Metadata::new()
            .with("N", self.n())
            .with("sigma", self.sigma)
            .with("seed", self.seed)
            .with("experiment_id", self.experiment_id)
            .with("distribution", self.distribution.as_str())
    }

    /// `k,r,u,y` table headed by the record metadata.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(self.metadata(), &["k", "r", "u", "y"]);
        for k in 0..self.n() {
            t.push_row(vec![
                k.to_string(),
                self.r[k].to_string(),
                self.u[k].to_string(),
                self.y[k].to_string(),
            ]);
        }
        t
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        let n: usize = t.metadata.parse("N")?;
        let (ck, cr, cu, cy) = (
            t.column("k")?,
            t.column("r")?,
            t.column("u")?,
            t.column("y")?,
        );
        if t.rows.len() != n {
            return Err(Error::Format(format!(
                "header says N = {n}, found {} rows",
                t.rows.len()
            )));
        }
        let mut rec = ExperimentRecord {
            r: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            sigma: t.metadata.parse("sigma")?,
            seed: t.metadata.parse("seed")?,
            experiment_id: t.metadata.parse("experiment_id")?,
            distribution: t
                .metadata
                .get("distribution")
                .map(str::parse)
                .transpose()?
                .unwrap_or_default(),
        };
        for (i, row) in t.rows.iter().enumerate() {
            let k: usize = row[ck]
                .parse()
                .map_err(|_| Error::Format(format!("bad sample index `{}`", row[ck])))?;
            if k != i {
                return Err(Error::Format(format!("row {i} has sample index {k}")));
            }
            rec.r.push(parse_f64(&row[cr], "r")?);
            rec.u.push(parse_f64(&row[cu], "u")?);
            rec.y.push(parse_f64(&row[cy], "y")?);
        }
        Ok(rec)
    }
}

/// DFTs of a record's channels, kept together for the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSpectra {
    pub r: Spectrum,
    pub u: Spectrum,
    pub y: Spectrum,
    pub experiment_id: u64,
}

impl RecordSpectra {
    pub fn n(&self) -> usize {
        self.r.n()
    }
}

/// Simulates `settle_periods + 1` periods and keeps the last one.
pub fn run_experiment(
    sys: &ClosedLoopSystem,
    excitation: &Excitation,
    noise: &NoiseConfig,
    settle_periods: usize,
) -> Result<ExperimentRecord> {
    let n = excitation.period()?;
    if settle_periods == 0 {
        return Err(Error::InvalidArgument(
            "settle_periods must be at least 1".into(),
        ));
    }
    if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and >= 0, got {}",
            noise.sigma
        )));
    }
    let total = (settle_periods + 1) * n;
    let keep_from = settle_periods * n;

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut plant = Filter::new(sys.plant());
    let mut ctrl = Filter::new(sys.controller());
    let mut noise_filter = Filter::new(sys.noise_model());
    // C(q) r1 for the recorded reference, run separately from the loop.
    let mut ref_filter = Filter::new(sys.controller());

    let g0 = plant.feedthrough();
    let c0 = ctrl.feedthrough();
    let loop_den = 1.0 + g0 * c0;

    let mut rec = ExperimentRecord {
        r: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        sigma: noise.sigma,
        seed: noise.seed,
        experiment_id: 0,
        distribution: noise.distribution,
    };

    for k in 0..total {
        let idx = k % n;
        let r1 = excitation.r1.as_ref().map_or(0.0, |s| s.samples()[idx]);
        let r2 = excitation.r2.as_ref().map_or(0.0, |s| s.samples()[idx]);
        let e = noise.distribution.sample(&mut rng);
        let v = noise.sigma * noise_filter.step(e);

        // Resolve the algebraic loop through the direct feedthrough terms.
        let y_now = (g0 * (c0 * r1 + ctrl.pending() + r2) + plant.pending() + v) / loop_den;
        let u = ctrl.step(r1 - y_now) + r2;
        let y = plant.step(u) + v;
        let r = r2 + ref_filter.step(r1);

        if k >= keep_from {
            rec.r.push(r);
            rec.u.push(u);
            rec.y.push(y);
        }
    }
    Ok(rec)
}

/// Two experiments sharing the excitation, with independent noise streams.
pub fn run_paired_experiments(
    sys: &ClosedLoopSystem,
    excitation: &Excitation,
    noise_a: &NoiseConfig,
    noise_b: &NoiseConfig,
    settle_periods: usize,
) -> Result<(ExperimentRecord, ExperimentRecord)> {
    if noise_a.seed == noise_b.seed {
        return Err(Error::EqualSeeds(noise_a.seed));
    }
    let mut a = run_experiment(sys, excitation, noise_a, settle_periods)?;
    let mut b = run_experiment(sys, excitation, noise_b, settle_periods)?;
    a.experiment_id = 0;
    b.experiment_id = 1;
    Ok((a, b))
}
