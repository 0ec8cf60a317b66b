//! Excitation generation, the unitary DFT, and spectra on the uniform grid
//! `omega_l = 2 pi l / N`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::csvio::{parse_f64, Metadata, Table};
use crate::error::{Error, Result};
use crate::lti::grid_omega;

/// Complex values on the DFT grid of a length-`n` record.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("spectrum"));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn omega(&self, l: usize) -> f64 {
        grid_omega(l, self.n())
    }

    pub fn omegas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n()).map(|l| self.omega(l))
    }

    pub fn min_magnitude(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.norm())
            .fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<usize> for Spectrum {
    type Output = Complex64;

    fn index(&self, l: usize) -> &Complex64 {
        &self.values[l]
    }
}

/// Twiddle table for repeated transforms of one length.
///
/// Exponents are reduced modulo `n` before lookup, so every product
/// `e^{-j 2 pi l k / n}` comes from the same `n` table entries.
#[derive(Debug, Clone)]
pub struct DftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    scale: f64,
}

impl DftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("DFT length"));
        }
        let twiddles = (0..n)
            .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64))
            .collect();
        Ok(Self {
            n,
            twiddles,
            scale: 1.0 / (n as f64).sqrt(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `e^{-j 2 pi m / n}` for any integer `m`.
    pub fn twiddle(&self, m: i64) -> Complex64 {
        self.twiddles[m.rem_euclid(self.n as i64) as usize]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrum> {
        if x.len() != self.n {
            return Err(Error::GridMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        let values = (0..self.n)
            .map(|l| {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut idx = 0usize;
                for &xk in x {
                    acc += self.twiddles[idx] * xk;
                    idx += l;
                    if idx >= self.n {
                        idx -= self.n;
                    }
                }
                acc * self.scale
            })
            .collect();
        Ok(Spectrum { values })
    }

    pub fn inverse(&self, spectrum: &Spectrum) -> Result<Vec<Complex64>> {
        if spectrum.n() != self.n {
            return Err(Error::GridMismatch {
                expected: self.n,
                found: spectrum.n(),
            });
        }
        Ok((0..self.n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut idx = 0usize;
                for v in &spectrum.values {
                    acc += v * self.twiddles[idx].conj();
                    idx += k;
                    if idx >= self.n {
                        idx -= self.n;
                    }
                }
                acc * self.scale
            })
            .collect())
    }
}

/// Unitary DFT: `X[l] = (1/sqrt N) sum_k x_k e^{-j 2 pi l k / N}`.
pub fn dft(signal: &[f64]) -> Result<Spectrum> {
    DftPlan::new(signal.len())?.forward(signal)
}

/// Inverse of [`dft`] with the same `1/sqrt N` normalisation.
pub fn inverse_dft(spectrum: &Spectrum) -> Result<Vec<Complex64>> {
    DftPlan::new(spectrum.n())?.inverse(spectrum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationKind {
    Prbs,
    Custom,
}

impl ExcitationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExcitationKind::Prbs => "prbs",
            ExcitationKind::Custom => "custom",
        }
    }
}

/// One period of a periodic excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSignal {
    samples: Vec<f64>,
    kind: ExcitationKind,
}

impl ExcitationSignal {
    pub fn custom(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("excitation"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "excitation samples must be finite".into(),
            ));
        }
        Ok(Self {
            samples,
            kind: ExcitationKind::Custom,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn period(&self) -> usize {
        self.samples.len()
    }

    pub fn kind(&self) -> ExcitationKind {
        self.kind
    }

    pub fn to_table(&self) -> Table {
        let md = Metadata::new()
            .with("N", self.period())
            .with("kind", self.kind.as_str());
        let mut t = Table::new(md, &["sample"]);
        for s in &self.samples {
            t.push_row(vec![s.to_string()]);
        }
        t
    }

    /// Reads a single-column `sample` table; the result is tagged custom.
    pub fn from_table(t: &Table) -> Result<Self> {
        let col = t.column("sample")?;
        let samples = t
            .rows
            .iter()
            .map(|r| parse_f64(&r[col], "sample"))
            .collect::<Result<Vec<_>>>()?;
        Self::custom(samples)
    }
}

/// Feedback taps (1-based bit positions) of primitive polynomials for
/// Fibonacci LFSRs of length 2..=16.
const PRBS_TAPS: [&[u32]; 15] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 11, 10, 4],
    &[13, 12, 11, 8],
    &[14, 13, 12, 2],
    &[15, 14],
    &[16, 15, 13, 4],
];

fn tap_mask(register_length: u32) -> u32 {
    PRBS_TAPS[(register_length - 2) as usize]
        .iter()
        .fold(0, |m, &t| m | 1 << (register_length - t))
}

/// Maximal-length pseudo-random binary sequence of period
/// `2^register_length - 1`, with bits mapped to `+amplitude` / `-amplitude`.
pub fn prbs(register_length: u32, amplitude: f64, seed: u32) -> Result<ExcitationSignal> {
    if !(2..=16).contains(&register_length) {
        return Err(Error::InvalidArgument(format!(
            "PRBS register length {register_length} outside 2..=16"
        )));
    }
    let width_mask = (1u32 << register_length) - 1;
    let mut state = seed & width_mask;
    if state == 0 {
        return Err(Error::ZeroSeed { register_length });
    }
    let taps = tap_mask(register_length);
    let period = width_mask as usize;
    let mut samples = Vec::with_capacity(period);
    for _ in 0..period {
        let out = state & 1;
        samples.push(if out == 1 { amplitude } else { -amplitude });
        let feedback = (state & taps).count_ones() & 1;
        state = (state >> 1) | (feedback << (register_length - 1));
    }
    Ok(ExcitationSignal {
        samples,
        kind: ExcitationKind::Prbs,
    })
}

/// `periods` back-to-back copies of one period.
pub fn periodic_extend(signal: &ExcitationSignal, periods: usize) -> Result<Vec<f64>> {
    if periods == 0 {
        return Err(Error::InvalidArgument("periods must be at least 1".into()));
    }
    Ok(signal.samples.repeat(periods))
}
