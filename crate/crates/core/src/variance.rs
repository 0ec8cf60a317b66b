//! Exact finite-N covariances of the noise DFTs and the small-noise
//! variance profiles of the estimators.
//!
//! With unit-variance innovations, the noise parts of the output and input
//! DFTs are `Vy = DFT(S H e)` and `Vu = -DFT(S C H e)`, the sign matching
//! `U = S R + Vu`. Their second moments at grid frequency `omega_l` are the
//! triangular lag-window sums
//!
//! ```text
//!   E[Va Vb*] = sum_{|k| < N} (N - |k|)/N  rho_ab(k)  e^{-j omega_l k}
//! ```
//!
//! i.e. the spectra convolved with the Fejer kernel. These are computed
//! exactly from the impulse responses, without quadrature.

use num_complex::Complex64;

use crate::csvio::{Metadata, Table};
use crate::error::{Error, Result};
use crate::estimators::default_floor;
use crate::lti::{grid_omega, ClosedLoopSystem, LoopTransfer, TransferFunction};
use crate::signals::{DftPlan, Spectrum};

/// Relative tail energy at which impulse responses are truncated.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

const MAX_IMPULSE_LEN: usize = 1 << 22;

/// Impulse response truncated once the energy of its most recent half
/// drops below `tail_tol` times the total.
pub fn truncated_impulse_response(tf: &TransferFunction, tail_tol: f64) -> Result<Vec<f64>> {
    if tf.is_fir() {
        let a0 = tf.den()[0];
        return Ok(tf.num().iter().map(|b| b / a0).collect());
    }
    let mut len = 64usize.max(2 * tf.den().len());
    loop {
        let h = tf.impulse_response(len);
        let total: f64 = h.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return Ok(h);
        }
        let recent: f64 = h[len / 2..].iter().map(|v| v * v).sum();
        if recent <= tail_tol * total {
            return Ok(h);
        }
        if !total.is_finite() || len >= MAX_IMPULSE_LEN {
            return Err(Error::NonDecaying(format!(
                "{:?} / {:?}",
                tf.num(),
                tf.den()
            )));
        }
        len *= 2;
    }
}

/// Lag-domain covariance `rho(k) = E[a(t+k) b(t)]` for `|k| < n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCovariance {
    /// `rho(0), rho(1), ...`
    pub nonnegative: Vec<f64>,
    /// `rho(-1), rho(-2), ...`
    pub negative: Vec<f64>,
}

impl LagCovariance {
    /// Symmetric autocovariance from its nonnegative lags.
    pub fn auto(rho: Vec<f64>) -> Self {
        let negative = rho.iter().skip(1).copied().collect();
        Self {
            nonnegative: rho,
            negative,
        }
    }

    pub fn at(&self, k: i64) -> f64 {
        if k >= 0 {
            self.nonnegative.get(k as usize).copied().unwrap_or(0.0)
        } else {
            self.negative.get((-k - 1) as usize).copied().unwrap_or(0.0)
        }
    }
}

fn lagged_products(a: &[f64], b: &[f64], lag: usize) -> f64 {
    // sum_i a(i + lag) b(i)
    if lag >= a.len() {
        return 0.0;
    }
    a[lag..].iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Autocovariance of unit-variance white noise filtered by `tf`, lags `0..n`.
pub fn filtered_autocovariance(tf: &TransferFunction, n: usize, tail_tol: f64) -> Result<Vec<f64>> {
    let h = truncated_impulse_response(tf, tail_tol)?;
    Ok((0..n).map(|k| lagged_products(&h, &h, k)).collect())
}

/// Cross-covariance `E[a(t+k) b(t)]` of the outputs of `tf_a` and `tf_b`
/// driven by the same unit-variance white noise, for `|k| < n`.
pub fn filtered_cross_covariance(
    tf_a: &TransferFunction,
    tf_b: &TransferFunction,
    n: usize,
    tail_tol: f64,
) -> Result<LagCovariance> {
    let ha = truncated_impulse_response(tf_a, tail_tol)?;
    let hb = truncated_impulse_response(tf_b, tail_tol)?;
    Ok(LagCovariance {
        nonnegative: (0..n).map(|k| lagged_products(&ha, &hb, k)).collect(),
        negative: (1..n).map(|k| lagged_products(&hb, &ha, k)).collect(),
    })
}

/// `sum_{|k|<n} (n-|k|)/n rho(k) e^{-j omega_l k}` at every grid frequency.
pub fn fejer_covariance(rho: &LagCovariance, n: usize) -> Result<Vec<Complex64>> {
    let plan = DftPlan::new(n)?;
    let weight = |k: i64| (n as f64 - k.unsigned_abs() as f64) / n as f64;
    let nn = n as i64;
    Ok((0..nn)
        .map(|l| {
            let mut acc = Complex64::new(weight(0) * rho.at(0), 0.0);
            for k in 1..nn {
                let w = weight(k);
                acc += plan.twiddle(l * k) * (w * rho.at(k));
                acc += plan.twiddle(-l * k) * (w * rho.at(-k));
            }
            acc
        })
        .collect())
}

/// Per-frequency second moments of the normalised noise DFTs.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariances {
    pub n: usize,
    /// `E|Vy|^2`
    pub sigma_y: Vec<f64>,
    /// `E|Vu|^2`
    pub sigma_u: Vec<f64>,
    /// `E[Vy Vu*]`
    pub sigma_yu: Vec<Complex64>,
}

impl NoiseCovariances {
    /// Leakage-free values `|SH|^2`, `|SCH|^2`, `-|SH|^2 C*` on the grid.
    pub fn no_leakage(sys: &ClosedLoopSystem, n: usize) -> Result<Self> {
        let mut out = Self {
            n,
            sigma_y: vec![],
            sigma_u: vec![],
            sigma_yu: vec![],
        };
        for l in 0..n {
            let w = grid_omega(l, n);
            let sh = sys.loop_response(LoopTransfer::SH, w)?;
            let sch = sys.loop_response(LoopTransfer::SCH, w)?;
            let c = sys.controller().evaluate(w)?;
            out.sigma_y.push(sh.norm_sqr());
            out.sigma_u.push(sch.norm_sqr());
            out.sigma_yu.push(-c.conj() * sh.norm_sqr());
        }
        Ok(out)
    }

    pub fn to_table(&self, metadata: Metadata) -> Table {
        let mut t = Table::new(
            metadata,
            &["omega", "sigma_y", "sigma_u", "sigma_yu_re", "sigma_yu_im"],
        );
        for l in 0..self.n {
            t.push_row(vec![
                grid_omega(l, self.n).to_string(),
                self.sigma_y[l].to_string(),
                self.sigma_u[l].to_string(),
                self.sigma_yu[l].re.to_string(),
                self.sigma_yu[l].im.to_string(),
            ]);
        }
        t
    }
}

/// Exact finite-N noise DFT covariances for the loop, per unit innovation
/// variance.
pub fn noise_covariances(
    sys: &ClosedLoopSystem,
    n: usize,
    tail_tol: f64,
) -> Result<NoiseCovariances> {
    let y_path = sys.loop_transfer_function(LoopTransfer::SH);
    let u_path = sys.loop_transfer_function(LoopTransfer::SCH).negated();
    let rho_y = LagCovariance::auto(filtered_autocovariance(&y_path, n, tail_tol)?);
    let rho_u = LagCovariance::auto(filtered_autocovariance(&u_path, n, tail_tol)?);
    let rho_yu = filtered_cross_covariance(&y_path, &u_path, n, tail_tol)?;
    Ok(NoiseCovariances {
        n,
        sigma_y: fejer_covariance(&rho_y, n)?.iter().map(|c| c.re).collect(),
        sigma_u: fejer_covariance(&rho_u, n)?.iter().map(|c| c.re).collect(),
        sigma_yu: fejer_covariance(&rho_yu, n)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    AsymptoticDir,
    AsymptoticInd,
    AsymptoticIo2,
    NoLeakageDir,
    NoLeakageIo2,
    McSample,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::AsymptoticDir => "asymptotic_dir",
            ProfileKind::AsymptoticInd => "asymptotic_ind",
            ProfileKind::AsymptoticIo2 => "asymptotic_io2",
            ProfileKind::NoLeakageDir => "no_leakage_dir",
            ProfileKind::NoLeakageIo2 => "no_leakage_io2",
            ProfileKind::McSample => "mc_sample",
        }
    }
}

/// How profile values relate to the innovation variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileScale {
    /// Multiply by `factor * sigma^2` to compare with data.
    PerUnitSigmaSquared { factor: f64 },
    /// Already in data units.
    Absolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    pub kind: ProfileKind,
    pub scale: ProfileScale,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl VarianceProfile {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Profile of an average over `experiments` geometrically averaged
    /// estimates (variance divided by that count).
    pub fn averaged_over(&self, experiments: usize) -> Self {
        let k = experiments as f64;
        let scale = match self.scale {
            ProfileScale::PerUnitSigmaSquared { factor } => {
                ProfileScale::PerUnitSigmaSquared { factor: factor / k }
            }
            ProfileScale::Absolute => ProfileScale::Absolute,
        };
        Self {
            kind: self.kind,
            scale,
            values: self.values.iter().map(|v| v / k).collect(),
            valid: self.valid.clone(),
        }
    }

    /// Values in data units for innovation standard deviation `sigma`.
    pub fn absolute(&self, sigma: f64) -> Vec<f64> {
        match self.scale {
            ProfileScale::PerUnitSigmaSquared { .. } => {
                self.values.iter().map(|v| v * sigma * sigma).collect()
            }
            ProfileScale::Absolute => self.values.clone(),
        }
    }

    /// `omega,value,kind` rows.
    pub fn push_rows(&self, t: &mut Table) {
        for l in 0..self.n() {
            let v = if self.valid[l] {
                self.values[l]
            } else {
                f64::NAN
            };
            t.push_row(vec![
                grid_omega(l, self.n()).to_string(),
                v.to_string(),
                self.kind.as_str().to_string(),
            ]);
        }
    }

    pub fn to_table(&self, metadata: Metadata) -> Table {
        let mut t = Table::new(metadata, &["omega", "value", "kind"]);
        self.push_rows(&mut t);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsymptoticKind {
    Direct,
    Indirect,
    JointIoTwoExp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoLeakageKind {
    Direct,
    JointIoTwoExp,
}

fn check_grid(r: &Spectrum, n: usize) -> Result<()> {
    if r.n() != n {
        return Err(Error::GridMismatch {
            expected: n,
            found: r.n(),
        });
    }
    Ok(())
}

/// Small-noise variances per unit `sigma^2`:
///
/// ```text
///   dir = (sy + |G|^2 su - 2 Re[G* syu]) / |S R|^2
///   ind = sy / (|S|^2 |S R|^2)
///   io2 = (sy + |G|^2 su) / |S R|^2
/// ```
pub fn asymptotic_variance(
    sys: &ClosedLoopSystem,
    r: &Spectrum,
    cov: &NoiseCovariances,
    which: AsymptoticKind,
) -> Result<VarianceProfile> {
    check_grid(r, cov.n)?;
    let floor = default_floor(cov.n);
    let mut values = Vec::with_capacity(cov.n);
    let mut valid = Vec::with_capacity(cov.n);
    for l in 0..cov.n {
        let w = grid_omega(l, cov.n);
        if r[l].norm() < floor {
            values.push(f64::NAN);
            valid.push(false);
            continue;
        }
        let s2 = sys.loop_response(LoopTransfer::S, w)?.norm_sqr();
        let g = sys.plant().evaluate(w)?;
        let sr2 = s2 * r[l].norm_sqr();
        let (sy, su, syu) = (cov.sigma_y[l], cov.sigma_u[l], cov.sigma_yu[l]);
        let v = match which {
            AsymptoticKind::Direct => (sy + g.norm_sqr() * su - 2.0 * (g.conj() * syu).re) / sr2,
            AsymptoticKind::Indirect => sy / (s2 * sr2),
            AsymptoticKind::JointIoTwoExp => (sy + g.norm_sqr() * su) / sr2,
        };
        values.push(v);
        valid.push(true);
    }
    let kind = match which {
        AsymptoticKind::Direct => ProfileKind::AsymptoticDir,
        AsymptoticKind::Indirect => ProfileKind::AsymptoticInd,
        AsymptoticKind::JointIoTwoExp => ProfileKind::AsymptoticIo2,
    };
    Ok(VarianceProfile {
        kind,
        scale: ProfileScale::PerUnitSigmaSquared { factor: 1.0 },
        values,
        valid,
    })
}

/// Leakage-free closed forms per unit `sigma^2`:
/// `dir = |H|^2 / |S R|^2`, `io2 = (1 + |C G|^2) |H|^2 / |R|^2`.
pub fn no_leakage_variance(
    sys: &ClosedLoopSystem,
    r: &Spectrum,
    which: NoLeakageKind,
) -> Result<VarianceProfile> {
    let n = r.n();
    let floor = default_floor(n);
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for l in 0..n {
        let w = grid_omega(l, n);
        if r[l].norm() < floor {
            values.push(f64::NAN);
            valid.push(false);
            continue;
        }
        let h2 = sys.noise_model().evaluate(w)?.norm_sqr();
        let r2 = r[l].norm_sqr();
        let v = match which {
            NoLeakageKind::Direct => h2 / (sys.loop_response(LoopTransfer::S, w)?.norm_sqr() * r2),
            NoLeakageKind::JointIoTwoExp => {
                (1.0 + sys.loop_response(LoopTransfer::GC, w)?.norm_sqr()) * h2 / r2
            }
        };
        values.push(v);
        valid.push(true);
    }
    let kind = match which {
        NoLeakageKind::Direct => ProfileKind::NoLeakageDir,
        NoLeakageKind::JointIoTwoExp => ProfileKind::NoLeakageIo2,
    };
    Ok(VarianceProfile {
        kind,
        scale: ProfileScale::PerUnitSigmaSquared { factor: 1.0 },
        values,
        valid,
    })
}

/// Per-frequency variance-ordering indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingPredicates {
    /// `Re[G* syu]`
    pub re_g_conj_syu: Vec<f64>,
    /// `Re[G* syu] < 0`: the two-experiment estimator has the smaller
    /// asymptotic variance (`io2 - dir = 2 Re[G* syu] / |SR|^2`).
    pub exact: Vec<bool>,
    /// `Re[C G]`
    pub re_cg: Vec<f64>,
    /// `Re[C G] < 0`: the loop is in the left half plane. Neglecting
    /// leakage, `Re[G* syu] = -|SH|^2 Re[C G]`, so this marks the band where
    /// the single-experiment estimator has the smaller variance.
    pub approximate: Vec<bool>,
}

impl OrderingPredicates {
    /// First grid index at which the approximate predicate holds.
    pub fn first_loop_negative(&self) -> Option<usize> {
        self.approximate.iter().position(|&b| b)
    }

    pub fn to_table(&self, metadata: Metadata) -> Table {
        let n = self.exact.len();
        let mut t = Table::new(
            metadata,
            &["omega", "re_g_conj_syu", "exact", "re_cg", "approximate"],
        );
        for l in 0..n {
            t.push_row(vec![
                grid_omega(l, n).to_string(),
                self.re_g_conj_syu[l].to_string(),
                u8::from(self.exact[l]).to_string(),
                self.re_cg[l].to_string(),
                u8::from(self.approximate[l]).to_string(),
            ]);
        }
        t
    }
}

pub fn ordering_predicate(
    sys: &ClosedLoopSystem,
    cov: &NoiseCovariances,
) -> Result<OrderingPredicates> {
    let mut out = OrderingPredicates {
        re_g_conj_syu: vec![],
        exact: vec![],
        re_cg: vec![],
        approximate: vec![],
    };
    for l in 0..cov.n {
        let w = grid_omega(l, cov.n);
        let g = sys.plant().evaluate(w)?;
        let x = (g.conj() * cov.sigma_yu[l]).re;
        let cg = sys.loop_response(LoopTransfer::GC, w)?.re;
        out.re_g_conj_syu.push(x);
        out.exact.push(x < 0.0);
        out.re_cg.push(cg);
        out.approximate.push(cg < 0.0);
    }
    Ok(out)
}

/// Zero crossing of `Re[G C]` from positive to negative inside `(lo, hi)`,
/// located by bisection.
pub fn loop_sign_change(sys: &ClosedLoopSystem, lo: f64, hi: f64) -> Result<Option<f64>> {
    let f = |w: f64| sys.loop_response(LoopTransfer::GC, w).map(|v| v.re);
    let (mut a, mut b) = (lo, hi);
    if !(f(a)? > 0.0 && f(b)? < 0.0) {
        return Ok(None);
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m)? > 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    Ok(Some(0.5 * (a + b)))
}
