//! Per-frequency non-parametric plant estimators.
//!
//! Every estimator is a ratio of DFTs and is evaluated independently at each
//! grid frequency. Denominators whose magnitude falls below a floor are
//! masked (value NaN, status [`FreqStatus::BelowFloor`]) instead of being
//! divided through.

use num_complex::Complex64;

use crate::csvio::{Metadata, Table};
use crate::error::{Error, Result};
use crate::lti::{grid_omega, TransferFunction};
use crate::sim::RecordSpectra;

const FLOOR_SCALE: f64 = 1e-12;

/// Default denominator floor `1e-12 sqrt(N)`.
pub fn default_floor(n: usize) -> f64 {
    FLOOR_SCALE * (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    EtfeYr,
    EtfeUr,
    Direct,
    Indirect,
    JointIo,
    JointIoTwoExp,
    GeoAvg,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::EtfeYr => "etfe_yr",
            Method::EtfeUr => "etfe_ur",
            Method::Direct => "direct",
            Method::Indirect => "indirect",
            Method::JointIo => "joint_io",
            Method::JointIoTwoExp => "joint_io_two_exp",
            Method::GeoAvg => "geo_avg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreqStatus {
    Valid,
    /// Denominator magnitude below the floor; the value is NaN.
    BelowFloor,
    /// Geometric average whose two square-root branches were equidistant
    /// from the arithmetic mean; the principal root was kept.
    AmbiguousBranch,
}

impl FreqStatus {
    pub fn is_valid(self) -> bool {
        self != FreqStatus::BelowFloor
    }

    /// Code written to the `valid` CSV column.
    pub fn code(self) -> u8 {
        match self {
            FreqStatus::BelowFloor => 0,
            FreqStatus::Valid => 1,
            FreqStatus::AmbiguousBranch => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Y,
    U,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantEstimate {
    pub values: Vec<Complex64>,
    pub status: Vec<FreqStatus>,
    pub method: Method,
    pub source_ids: Vec<u64>,
}

impl PlantEstimate {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn is_valid(&self, l: usize) -> bool {
        self.status[l].is_valid()
    }

    pub fn valid_count(&self) -> usize {
        self.status.iter().filter(|s| s.is_valid()).count()
    }

    /// `omega,re,im,valid,method` rows; `label` fills the method column.
    pub fn to_table(&self, label: &str, metadata: Metadata) -> Table {
        let mut md = metadata;
        md.push(
            "sources",
            self.source_ids
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        );
        let mut t = Table::new(md, &["omega", "re", "im", "valid", "method"]);
        for (l, (v, s)) in self.values.iter().zip(&self.status).enumerate() {
            t.push_row(vec![
                grid_omega(l, self.n()).to_string(),
                v.re.to_string(),
                v.im.to_string(),
                s.code().to_string(),
                label.to_string(),
            ]);
        }
        t
    }
}

fn ratio(num: &[Complex64], den: &[Complex64], floor: f64) -> (Vec<Complex64>, Vec<FreqStatus>) {
    num.iter()
        .zip(den)
        .map(|(&a, &b)| {
            if b.norm() < floor {
                (Complex64::new(f64::NAN, f64::NAN), FreqStatus::BelowFloor)
            } else {
                (a / b, FreqStatus::Valid)
            }
        })
        .unzip()
}

/// Estimator settings shared by all methods.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimatorOptions {
    /// Denominator magnitude floor; `None` uses [`default_floor`].
    pub floor: Option<f64>,
}

impl EstimatorOptions {
    fn floor(&self, n: usize) -> f64 {
        self.floor.unwrap_or_else(|| default_floor(n))
    }
}

/// Closed-loop ETFE `Y/R` or `U/R`.
pub fn etfe(rec: &RecordSpectra, channel: Channel, opts: EstimatorOptions) -> PlantEstimate {
    let (num, method) = match channel {
        Channel::Y => (&rec.y, Method::EtfeYr),
        Channel::U => (&rec.u, Method::EtfeUr),
    };
    let (values, status) = ratio(num.values(), rec.r.values(), opts.floor(rec.n()));
    PlantEstimate {
        values,
        status,
        method,
        source_ids: vec![rec.experiment_id],
    }
}

/// Direct method `Y/U`.
pub fn direct(rec: &RecordSpectra, opts: EstimatorOptions) -> PlantEstimate {
    let (values, status) = ratio(rec.y.values(), rec.u.values(), opts.floor(rec.n()));
    PlantEstimate {
        values,
        status,
        method: Method::Direct,
        source_ids: vec![rec.experiment_id],
    }
}

/// Indirect method `T_yr / (1 - T_yr C)` with `C` evaluated on the grid.
pub fn indirect(
    rec: &RecordSpectra,
    controller: &TransferFunction,
    opts: EstimatorOptions,
) -> Result<PlantEstimate> {
    let n = rec.n();
    let floor = opts.floor(n);
    let tyr = etfe(rec, Channel::Y, opts);
    let mut values = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for l in 0..n {
        let c = controller.evaluate(grid_omega(l, n))?;
        let t = tyr.values[l];
        let den = Complex64::new(1.0, 0.0) - t * c;
        if !tyr.is_valid(l) || den.norm() < floor {
            values.push(Complex64::new(f64::NAN, f64::NAN));
            status.push(FreqStatus::BelowFloor);
        } else {
            values.push(t / den);
            status.push(FreqStatus::Valid);
        }
    }
    Ok(PlantEstimate {
        values,
        status,
        method: Method::Indirect,
        source_ids: vec![rec.experiment_id],
    })
}

/// Joint input-output method `T_yr / T_ur`.
///
/// The shared `R` cancels, so this is evaluated as `Y/U` and coincides with
/// [`direct`] bit for bit.
pub fn joint_io(rec: &RecordSpectra, opts: EstimatorOptions) -> PlantEstimate {
    PlantEstimate {
        method: Method::JointIo,
        ..direct(rec, opts)
    }
}

/// Two-experiment joint input-output method `Y(a) / U(b)`: numerator and
/// denominator come from experiments with independent noise.
pub fn joint_io_two_experiments(
    rec_a: &RecordSpectra,
    rec_b: &RecordSpectra,
    opts: EstimatorOptions,
) -> Result<PlantEstimate> {
    if rec_a.n() != rec_b.n() {
        return Err(Error::GridMismatch {
            expected: rec_a.n(),
            found: rec_b.n(),
        });
    }
    if rec_a.r != rec_b.r {
        return Err(Error::ExcitationMismatch);
    }
    let (values, status) = ratio(rec_a.y.values(), rec_b.u.values(), opts.floor(rec_a.n()));
    Ok(PlantEstimate {
        values,
        status,
        method: Method::JointIoTwoExp,
        source_ids: vec![rec_a.experiment_id, rec_b.experiment_id],
    })
}

/// Complex square root of `a b`, on the branch nearest to `(a + b) / 2`.
/// Returns the root and whether the two branches tied.
pub fn geometric_mean(a: Complex64, b: Complex64) -> (Complex64, bool) {
    let root = (a * b).sqrt();
    let mean = (a + b) * 0.5;
    let d_plus = (root - mean).norm_sqr();
    let d_minus = (-root - mean).norm_sqr();
    if d_plus < d_minus {
        (root, false)
    } else if d_minus < d_plus {
        (-root, false)
    } else {
        (root, true)
    }
}

/// Per-frequency geometric average of two estimates of the same kind.
pub fn geometric_average(a: &PlantEstimate, b: &PlantEstimate) -> Result<PlantEstimate> {
    if a.n() != b.n() {
        return Err(Error::GridMismatch {
            expected: a.n(),
            found: b.n(),
        });
    }
    if a.method != b.method {
        return Err(Error::InvalidArgument(format!(
            "cannot average {} with {}",
            a.method.as_str(),
            b.method.as_str()
        )));
    }
    let (values, status) = a
        .values
        .iter()
        .zip(&b.values)
        .enumerate()
        .map(|(l, (&x, &y))| {
            if !a.is_valid(l) || !b.is_valid(l) {
                return (Complex64::new(f64::NAN, f64::NAN), FreqStatus::BelowFloor);
            }
            match geometric_mean(x, y) {
                (v, false) => (v, FreqStatus::Valid),
                (v, true) => (v, FreqStatus::AmbiguousBranch),
            }
        })
        .unzip();
    let mut source_ids = a.source_ids.clone();
    source_ids.extend(&b.source_ids);
    Ok(PlantEstimate {
        values,
        status,
        method: Method::GeoAvg,
        source_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{dft, prbs, Spectrum};

    fn spectra_from(r: &[f64], u: &[f64], y: &[f64], id: u64) -> RecordSpectra {
        RecordSpectra {
            r: dft(r).unwrap(),
            u: dft(u).unwrap(),
            y: dft(y).unwrap(),
            experiment_id: id,
        }
    }

    #[test]
    fn static_gain_direct() {
        let u = prbs(4, 1.0, 3).unwrap().samples().to_vec();
        let y: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        let est = direct(&spectra_from(&u, &u, &y, 0), EstimatorOptions::default());
        for v in &est.values {
            assert!((v - 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn etfe_of_identity_is_one() {
        let mut r = vec![0.0; 8];
        r[0] = 1.0;
        let sp = spectra_from(&r, &r, &r, 0);
        let est = etfe(&sp, Channel::Y, EstimatorOptions::default());
        assert!(est.values.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
        assert_eq!(est.method, Method::EtfeYr);
    }

    #[test]
    fn joint_io_reduces_to_etfe_when_u_equals_r() {
        let r = prbs(5, 1.0, 1).unwrap().samples().to_vec();
        let y: Vec<f64> = r
            .iter()
            .enumerate()
            .map(|(k, v)| v * 0.3 + (k % 3) as f64)
            .collect();
        let sp = spectra_from(&r, &r, &y, 0);
        let io = joint_io(&sp, EstimatorOptions::default());
        let e = etfe(&sp, Channel::Y, EstimatorOptions::default());
        for l in 0..sp.n() {
            assert!((io.values[l] - e.values[l]).norm() < 1e-12);
        }
    }

    #[test]
    fn indirect_without_controller_is_open_loop_etfe() {
        let r = prbs(5, 1.0, 1).unwrap().samples().to_vec();
        let y: Vec<f64> = r
            .iter()
            .enumerate()
            .map(|(k, v)| v - 0.1 * k as f64)
            .collect();
        let sp = spectra_from(&r, &r, &y, 0);
        let ind = indirect(&sp, &TransferFunction::zero(), EstimatorOptions::default()).unwrap();
        let e = etfe(&sp, Channel::Y, EstimatorOptions::default());
        assert_eq!(ind.values, e.values);
    }

    #[test]
    fn masked_frequencies() {
        // Alternating input has no DC and no content except at N/2.
        let u = [1.0, -1.0, 1.0, -1.0];
        let y = [0.5, 0.1, -0.2, 0.3];
        let est = direct(&spectra_from(&u, &u, &y, 0), EstimatorOptions::default());
        assert_eq!(est.status[0], FreqStatus::BelowFloor);
        assert!(est.values[0].re.is_nan());
        assert_eq!(est.status[2], FreqStatus::Valid);
        assert_eq!(est.valid_count(), 1);
        let tbl = est.to_table("direct", Metadata::new());
        assert_eq!(tbl.rows[0][3], "0");
        assert_eq!(tbl.rows[2][3], "1");
    }

    #[test]
    fn two_experiment_mismatch_rejected() {
        let r = prbs(4, 1.0, 1).unwrap().samples().to_vec();
        let r2 = prbs(4, 1.0, 2).unwrap().samples().to_vec();
        let a = spectra_from(&r, &r, &r, 0);
        let b = spectra_from(&r2, &r2, &r2, 1);
        assert!(matches!(
            joint_io_two_experiments(&a, &b, EstimatorOptions::default()),
            Err(Error::ExcitationMismatch)
        ));
    }

    #[test]
    fn two_experiment_degenerate_equals_direct() {
        let r = prbs(5, 1.0, 1).unwrap().samples().to_vec();
        let u: Vec<f64> = r.iter().map(|v| 0.7 * v + 0.01).collect();
        let y: Vec<f64> = r.iter().rev().copied().collect();
        let a = spectra_from(&r, &u, &y, 4);
        let two = joint_io_two_experiments(&a, &a, EstimatorOptions::default()).unwrap();
        assert_eq!(two.values, direct(&a, EstimatorOptions::default()).values);
    }

    #[test]
    fn geometric_mean_branch_rule() {
        let g = Complex64::new(-1.2, 0.3);
        assert_eq!(geometric_mean(g, g), (g, false));
        assert_eq!(
            geometric_mean(Complex64::new(4.0, 0.0), Complex64::new(1.0, 0.0)).0,
            Complex64::new(2.0, 0.0)
        );
        let neg = Complex64::new(-4.0, 0.0);
        let (v, tie) = geometric_mean(neg, Complex64::new(-1.0, 0.0));
        assert!(!tie);
        assert!((v - Complex64::new(-2.0, 0.0)).norm() < 1e-15);
        let (_, tie) = geometric_mean(Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0));
        assert!(tie);
    }

    #[test]
    fn geometric_average_checks() {
        let spec = |v: Vec<Complex64>, m| PlantEstimate {
            status: vec![FreqStatus::Valid; v.len()],
            values: v,
            method: m,
            source_ids: vec![0],
        };
        let a = spec(vec![Complex64::new(1.0, 0.0); 3], Method::Direct);
        let b = spec(vec![Complex64::new(1.0, 0.0); 4], Method::Direct);
        assert!(geometric_average(&a, &b).is_err());
        let c = spec(vec![Complex64::new(1.0, 0.0); 3], Method::Indirect);
        assert!(geometric_average(&a, &c).is_err());
        let tie = spec(vec![Complex64::new(-1.0, 0.0); 3], Method::Direct);
        let out = geometric_average(&a, &tie).unwrap();
        assert!(out.status.iter().all(|s| *s == FreqStatus::AmbiguousBranch));
        assert_eq!(out.valid_count(), 3);
    }

    #[test]
    fn per_frequency_independence() {
        let r = prbs(5, 1.0, 1).unwrap().samples().to_vec();
        let y: Vec<f64> = r.iter().map(|v| v * 1.5 + 0.2).collect();
        let mut sp = spectra_from(&r, &r, &y, 0);
        let before = direct(&sp, EstimatorOptions::default());
        let mut vals = sp.y.values().to_vec();
        vals[3] = Complex64::new(99.0, -4.0);
        sp.y = Spectrum::new(vals).unwrap();
        let after = direct(&sp, EstimatorOptions::default());
        for l in 0..sp.n() {
            if l != 3 {
                assert_eq!(before.values[l], after.values[l]);
            }
        }
    }
}
