//! Monte Carlo harness: repeated closed-loop experiments, per-frequency
//! sample statistics of the estimators, and comparison with theory.
//!
//! Runs are split into fixed-size chunks processed in parallel; chunk
//! accumulators are merged in chunk order, so results do not depend on
//! scheduling or thread count.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::csvio::{Metadata, Table};
use crate::error::{Error, Result};
use crate::estimators::{
    direct, etfe, geometric_average, indirect, joint_io, joint_io_two_experiments, Channel,
    EstimatorOptions, PlantEstimate,
};
use crate::lti::{grid_omega, ClosedLoopSystem};
use crate::signals::{DftPlan, Spectrum};
use crate::sim::{run_experiment, Excitation, NoiseConfig, NoiseDistribution, RecordSpectra};
use crate::variance::{
    asymptotic_variance, AsymptoticKind, NoiseCovariances, ProfileKind, ProfileScale,
    VarianceProfile,
};

const CHUNK_RUNS: usize = 16;
const SEED_STRIDE: u64 = 4;

pub const SEED_SCHEME: &str = "splitmix64(splitmix64(base) + 4*run + experiment)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    EtfeYr,
    EtfeUr,
    Direct,
    Indirect,
    JointIo,
    JointIoTwoExp,
    GeoAvgDirect,
    GeoAvgJointIoTwoExp,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::EtfeYr,
        EstimatorKind::EtfeUr,
        EstimatorKind::Direct,
        EstimatorKind::Indirect,
        EstimatorKind::JointIo,
        EstimatorKind::JointIoTwoExp,
        EstimatorKind::GeoAvgDirect,
        EstimatorKind::GeoAvgJointIoTwoExp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::EtfeYr => "etfe_yr",
            EstimatorKind::EtfeUr => "etfe_ur",
            EstimatorKind::Direct => "direct",
            EstimatorKind::Indirect => "indirect",
            EstimatorKind::JointIo => "joint_io",
            EstimatorKind::JointIoTwoExp => "joint_io_two_exp",
            EstimatorKind::GeoAvgDirect => "geo_avg_direct",
            EstimatorKind::GeoAvgJointIoTwoExp => "geo_avg_joint_io_two_exp",
        }
    }

    /// Number of independent experiments the estimator consumes.
    pub fn experiments_required(self) -> usize {
        match self {
            EstimatorKind::JointIoTwoExp | EstimatorKind::GeoAvgDirect => 2,
            EstimatorKind::GeoAvgJointIoTwoExp => 4,
            _ => 1,
        }
    }

    /// Evaluates the estimator on `records`, which must hold at least
    /// [`Self::experiments_required`] spectra sharing one excitation.
    ///
    /// The geometrically averaged two-experiment estimator pairs
    /// `Y(0)/U(2)` with `Y(1)/U(3)`.
    pub fn estimate(
        self,
        records: &[RecordSpectra],
        sys: &ClosedLoopSystem,
        opts: EstimatorOptions,
    ) -> Result<PlantEstimate> {
        if records.len() < self.experiments_required() {
            return Err(Error::InvalidArgument(format!(
                "{} needs {} experiments, got {}",
                self.as_str(),
                self.experiments_required(),
                records.len()
            )));
        }
        let r = records;
        match self {
            EstimatorKind::EtfeYr => Ok(etfe(&r[0], Channel::Y, opts)),
            EstimatorKind::EtfeUr => Ok(etfe(&r[0], Channel::U, opts)),
            EstimatorKind::Direct => Ok(direct(&r[0], opts)),
            EstimatorKind::Indirect => indirect(&r[0], sys.controller(), opts),
            EstimatorKind::JointIo => Ok(joint_io(&r[0], opts)),
            EstimatorKind::JointIoTwoExp => joint_io_two_experiments(&r[0], &r[1], opts),
            EstimatorKind::GeoAvgDirect => {
                geometric_average(&direct(&r[0], opts), &direct(&r[1], opts))
            }
            EstimatorKind::GeoAvgJointIoTwoExp => geometric_average(
                &joint_io_two_experiments(&r[0], &r[2], opts)?,
                &joint_io_two_experiments(&r[1], &r[3], opts)?,
            ),
        }
    }

    /// Small-noise variance profile predicted for this estimator, if any.
    pub fn theory(
        self,
        sys: &ClosedLoopSystem,
        r: &Spectrum,
        cov: &NoiseCovariances,
    ) -> Result<Option<VarianceProfile>> {
        let p = match self {
            EstimatorKind::Direct | EstimatorKind::JointIo => {
                asymptotic_variance(sys, r, cov, AsymptoticKind::Direct)?
            }
            EstimatorKind::Indirect => asymptotic_variance(sys, r, cov, AsymptoticKind::Indirect)?,
            EstimatorKind::JointIoTwoExp => {
                asymptotic_variance(sys, r, cov, AsymptoticKind::JointIoTwoExp)?
            }
            EstimatorKind::GeoAvgDirect => {
                asymptotic_variance(sys, r, cov, AsymptoticKind::Direct)?.averaged_over(2)
            }
            EstimatorKind::GeoAvgJointIoTwoExp => {
                asymptotic_variance(sys, r, cov, AsymptoticKind::JointIoTwoExp)?.averaged_over(2)
            }
            EstimatorKind::EtfeYr | EstimatorKind::EtfeUr => return Ok(None),
        };
        Ok(Some(p))
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    Single,
    Paired,
    Quad,
}

impl Pairing {
    pub fn experiments(self) -> usize {
        match self {
            Pairing::Single => 1,
            Pairing::Paired => 2,
            Pairing::Quad => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pairing::Single => "single",
            Pairing::Paired => "paired",
            Pairing::Quad => "quad",
        }
    }

    /// Smallest pairing that feeds every estimator in `kinds`.
    pub fn minimal_for(kinds: &[EstimatorKind]) -> Self {
        match kinds
            .iter()
            .map(|k| k.experiments_required())
            .max()
            .unwrap_or(1)
        {
            1 => Pairing::Single,
            2 => Pairing::Paired,
            _ => Pairing::Quad,
        }
    }
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Pairing::Single),
            "paired" => Ok(Pairing::Paired),
            "quad" => Ok(Pairing::Quad),
            other => Err(Error::InvalidArgument(format!("unknown pairing `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub runs: usize,
    pub sigma: f64,
    pub base_seed: u64,
    pub distribution: NoiseDistribution,
    pub estimators: Vec<EstimatorKind>,
    pub pairing: Pairing,
    pub options: EstimatorOptions,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs < 2 {
            return Err(Error::InvalidArgument(
                "Monte Carlo needs at least 2 runs".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators requested".into()));
        }
        for k in &self.estimators {
            if k.experiments_required() > self.pairing.experiments() {
                return Err(Error::InvalidArgument(format!(
                    "{} needs {} experiments per run but pairing `{}` provides {}",
                    k.as_str(),
                    k.experiments_required(),
                    self.pairing.as_str(),
                    self.pairing.experiments()
                )));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Noise seed for experiment `experiment` (< 4) of run `run`.
///
/// `splitmix64` is a bijection, so distinct `(run, experiment)` pairs under
/// one base seed always get distinct seeds.
pub fn derive_seed(base_seed: u64, run: u64, experiment: u64) -> u64 {
    debug_assert!(experiment < SEED_STRIDE);
    splitmix64(splitmix64(base_seed).wrapping_add(run.wrapping_mul(SEED_STRIDE) + experiment))
}

/// Streaming mean and sum of squared deviations for complex samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComplexAccumulator {
    pub count: u64,
    pub mean: Complex64,
    pub m2: f64,
}

impl ComplexAccumulator {
    pub fn push(&mut self, x: Complex64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += (delta * (x - self.mean).conj()).re;
    }

    pub fn merge(&mut self, other: &ComplexAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        self.mean += delta * (nb / n);
        self.m2 += other.m2 + delta.norm_sqr() * na * nb / n;
        self.count += other.count;
    }

    /// `E|x - mean|^2` with the `1/(count-1)` normalisation.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EstimatorAccumulator {
    freqs: Vec<ComplexAccumulator>,
}

impl EstimatorAccumulator {
    fn new(n: usize) -> Self {
        Self {
            freqs: vec![ComplexAccumulator::default(); n],
        }
    }

    fn push(&mut self, est: &PlantEstimate) {
        for (l, acc) in self.freqs.iter_mut().enumerate() {
            if est.is_valid(l) {
                acc.push(est.values[l]);
            }
        }
    }

    fn merge(&mut self, other: &EstimatorAccumulator) {
        for (a, b) in self.freqs.iter_mut().zip(&other.freqs) {
            a.merge(b);
        }
    }
}

/// Per-frequency sample statistics of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorStats {
    pub kind: EstimatorKind,
    pub mean: Vec<Complex64>,
    /// Sample variance over valid runs, `1/(valid-1)` normalisation.
    pub variance: Vec<f64>,
    /// Runs that survived denominator masking.
    pub valid: Vec<u64>,
}

impl EstimatorStats {
    fn from_accumulator(kind: EstimatorKind, acc: &EstimatorAccumulator) -> Self {
        Self {
            kind,
            mean: acc.freqs.iter().map(|a| a.mean).collect(),
            variance: acc.freqs.iter().map(|a| a.variance()).collect(),
            valid: acc.freqs.iter().map(|a| a.count).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.variance.len()
    }

    pub fn variance_profile(&self) -> VarianceProfile {
        VarianceProfile {
            kind: ProfileKind::McSample,
            scale: ProfileScale::Absolute,
            values: self.variance.clone(),
            valid: self.valid.iter().map(|&c| c >= 2).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub n: usize,
    pub runs: usize,
    pub sigma: f64,
    pub base_seed: u64,
    pub pairing: Pairing,
    pub distribution: NoiseDistribution,
    pub settle_periods: usize,
    pub stats: Vec<EstimatorStats>,
}

impl McResult {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorStats> {
        self.stats.iter().find(|s| s.kind == kind)
    }

    /// Errors if some estimator was masked in every run at every frequency.
    pub fn ensure_not_all_masked(&self) -> Result<()> {
        match self.stats.iter().find(|s| s.valid.iter().all(|&c| c == 0)) {
            Some(s) => Err(Error::AllMasked(s.kind.as_str().into())),
            None => Ok(()),
        }
    }

    pub fn metadata(&self) -> Metadata {
        Metadata::new()
            .with("N", self.n)
            .with("runs", self.runs)
            .with("sigma", self.sigma)
            .with("base_seed", self.base_seed)
            .with("seed_scheme", SEED_SCHEME)
            .with("pairing", self.pairing.as_str())
            .with("distribution", self.distribution.as_str())
            .with("settle_periods", self.settle_periods)
            .with("variance_normalisation", "1/(valid-1)")
    }
}

fn simulate_run(
    sys: &ClosedLoopSystem,
    excitation: &Excitation,
    mc: &McConfig,
    settle_periods: usize,
    plan: &DftPlan,
    run: usize,
) -> Result<Vec<RecordSpectra>> {
    let k = mc.pairing.experiments();
    (0..k)
        .map(|e| {
            let noise = NoiseConfig {
                sigma: mc.sigma,
                distribution: mc.distribution,
                seed: derive_seed(mc.base_seed, run as u64, e as u64),
            };
            let mut rec = run_experiment(sys, excitation, &noise, settle_periods)?;
            rec.experiment_id = (run * k + e) as u64;
            rec.spectra_with(plan)
        })
        .collect()
}

fn run_chunk(
    sys: &ClosedLoopSystem,
    excitation: &Excitation,
    mc: &McConfig,
    settle_periods: usize,
    plan: &DftPlan,
    runs: std::ops::Range<usize>,
) -> Result<Vec<EstimatorAccumulator>> {
    let mut accs = vec![EstimatorAccumulator::new(plan.n()); mc.estimators.len()];
    for run in runs {
        let records = simulate_run(sys, excitation, mc, settle_periods, plan, run)?;
        for (acc, kind) in accs.iter_mut().zip(&mc.estimators) {
            acc.push(&kind.estimate(&records, sys, mc.options)?);
        }
    }
    Ok(accs)
}

/// Runs `mc.runs` independent repetitions of the experiment set and
/// accumulates per-frequency statistics of each requested estimator over
/// the runs where it was not masked.
pub fn run_mc(
    sys: &ClosedLoopSystem,
    excitation: &Excitation,
    mc: &McConfig,
    settle_periods: usize,
) -> Result<McResult> {
    mc.validate()?;
    let plan = DftPlan::new(excitation.period()?)?;
    let chunks: Vec<_> = (0..mc.runs)
        .step_by(CHUNK_RUNS)
        .map(|start| start..(start + CHUNK_RUNS).min(mc.runs))
        .collect();
    let partials = chunks
        .into_par_iter()
        .map(|range| run_chunk(sys, excitation, mc, settle_periods, &plan, range))
        .collect::<Result<Vec<_>>>()?;

    let mut total = vec![EstimatorAccumulator::new(plan.n()); mc.estimators.len()];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(McResult {
        n: plan.n(),
        runs: mc.runs,
        sigma: mc.sigma,
        base_seed: mc.base_seed,
        pairing: mc.pairing,
        distribution: mc.distribution,
        settle_periods,
        stats: mc
            .estimators
            .iter()
            .zip(&total)
            .map(|(&k, acc)| EstimatorStats::from_accumulator(k, acc))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub omega: f64,
    pub mc: f64,
    /// Theory in data units (already scaled by `sigma^2`).
    pub theory: f64,
    pub abs_diff: f64,
    pub rel_diff: f64,
    pub exceeds: bool,
    pub validity: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileComparison {
    pub estimator: EstimatorKind,
    pub theory_kind: ProfileKind,
    pub rows: Vec<ComparisonRow>,
}

impl ProfileComparison {
    pub fn flagged(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| r.exceeds)
    }

    pub fn push_rows(&self, t: &mut Table) {
        for r in &self.rows {
            t.push_row(vec![
                r.omega.to_string(),
                self.estimator.as_str().to_string(),
                r.mc.to_string(),
                r.theory.to_string(),
                r.abs_diff.to_string(),
                r.rel_diff.to_string(),
                r.validity.to_string(),
            ]);
        }
    }
}

/// Header of the Monte Carlo comparison CSV.
pub const COMPARISON_HEADER: [&str; 7] = [
    "omega",
    "estimator",
    "mc_var",
    "theory_var",
    "abs_diff",
    "rel_diff",
    "validity",
];

/// Per-frequency MC sample variance against `sigma^2`-scaled theory.
/// Rows whose relative difference exceeds `threshold` are flagged.
pub fn compare_profiles(
    stats: &EstimatorStats,
    theory: &VarianceProfile,
    sigma: f64,
    threshold: f64,
) -> Result<ProfileComparison> {
    if stats.n() != theory.n() {
        return Err(Error::GridMismatch {
            expected: stats.n(),
            found: theory.n(),
        });
    }
    let scaled = theory.absolute(sigma);
    let n = stats.n();
    let rows = (0..n)
        .map(|l| {
            let mc = stats.variance[l];
            let th = if theory.valid[l] { scaled[l] } else { f64::NAN };
            let abs_diff = (mc - th).abs();
            let rel_diff = abs_diff / th;
            ComparisonRow {
                omega: grid_omega(l, n),
                mc,
                theory: th,
                abs_diff,
                rel_diff,
                exceeds: rel_diff > threshold,
                validity: stats.valid[l],
            }
        })
        .collect();
    Ok(ProfileComparison {
        estimator: stats.kind,
        theory_kind: theory.kind,
        rows,
    })
}
