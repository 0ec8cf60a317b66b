//! Discrete-time rational transfer functions and the closed-loop
//! composition used throughout the crate.
//!
//! Coefficients are stored in ascending powers of the backward shift, so
//! `num = [b0, b1, ...]`, `den = [a0, a1, ...]` is the difference equation
//! `a0 y(k) + a1 y(k-1) + ... = b0 u(k) + b1 u(k-1) + ...`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::poly;

/// Default stability margin for pole-modulus tests.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-9;

const POLE_ON_CIRCLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if num.is_empty() {
            return Err(Error::MalformedTransferFunction(
                "numerator is empty".into(),
            ));
        }
        match den.first() {
            None => {
                return Err(Error::MalformedTransferFunction(
                    "denominator is empty".into(),
                ))
            }
            Some(&0.0) => {
                return Err(Error::MalformedTransferFunction(
                    "den[0] must be nonzero".into(),
                ))
            }
            _ => {}
        }
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(Error::MalformedTransferFunction(
                "coefficients must be finite".into(),
            ));
        }
        Ok(Self { num, den })
    }

    pub fn unity() -> Self {
        Self::gain(1.0)
    }

    pub fn zero() -> Self {
        Self::gain(0.0)
    }

    pub fn gain(k: f64) -> Self {
        Self {
            num: vec![k],
            den: vec![1.0],
        }
    }

    /// FIR filter with the given taps.
    pub fn fir(taps: Vec<f64>) -> Result<Self> {
        Self::new(taps, vec![1.0])
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.iter().all(|&c| c == 0.0)
    }

    pub fn is_fir(&self) -> bool {
        self.den[1..].iter().all(|&c| c == 0.0)
    }

    /// Frequency response at `omega` radians per sample.
    pub fn evaluate(&self, omega: f64) -> Result<Complex64> {
        let zinv = Complex64::from_polar(1.0, -omega);
        let d = poly::eval_backward(&self.den, zinv);
        let scale: f64 = self.den.iter().map(|c| c.abs()).sum();
        if d.norm() <= POLE_ON_CIRCLE_TOL * scale {
            return Err(Error::PoleOnCircle { omega });
        }
        Ok(poly::eval_backward(&self.num, zinv) / d)
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        poly::roots(&self.den)
    }

    pub fn max_pole_modulus(&self) -> Result<f64> {
        poly::max_root_modulus(&self.den)
    }

    /// True iff every pole lies strictly inside the circle of radius `1 - margin`.
    pub fn is_stable(&self, margin: f64) -> Result<bool> {
        Ok(self.max_pole_modulus()? < 1.0 - margin)
    }

    /// Series connection, without any pole-zero cancellation.
    pub fn series(&self, other: &TransferFunction) -> TransferFunction {
        TransferFunction {
            num: poly::mul(&self.num, &other.num),
            den: poly::mul(&self.den, &other.den),
        }
    }

    pub fn negated(&self) -> TransferFunction {
        TransferFunction {
            num: self.num.iter().map(|c| -c).collect(),
            den: self.den.clone(),
        }
    }

    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut f = Filter::new(self);
        (0..len)
            .map(|k| f.step(if k == 0 { 1.0 } else { 0.0 }))
            .collect()
    }
}

/// Stateful transposed direct-form II realisation of a [`TransferFunction`].
///
/// The state holds `max(len(num), len(den)) - 1` values.
#[derive(Debug, Clone)]
pub struct Filter {
    b: Vec<f64>,
    a: Vec<f64>,
    state: Vec<f64>,
}

impl Filter {
    pub fn new(tf: &TransferFunction) -> Self {
        let order = tf.num.len().max(tf.den.len());
        let a0 = tf.den[0];
        let mut b = vec![0.0; order];
        let mut a = vec![0.0; order];
        for (dst, &c) in b.iter_mut().zip(&tf.num) {
            *dst = c / a0;
        }
        for (dst, &c) in a.iter_mut().zip(&tf.den) {
            *dst = c / a0;
        }
        Filter {
            b,
            a,
            state: vec![0.0; order - 1],
        }
    }

    pub fn with_state(tf: &TransferFunction, state: &[f64]) -> Result<Self> {
        let mut f = Self::new(tf);
        if state.len() != f.state.len() {
            return Err(Error::InvalidArgument(format!(
                "initial state has length {}, filter needs {}",
                state.len(),
                f.state.len()
            )));
        }
        f.state.copy_from_slice(state);
        Ok(f)
    }

    pub fn state_len(&self) -> usize {
        self.state.len()
    }

    /// Direct feedthrough `b0 / a0`.
    pub fn feedthrough(&self) -> f64 {
        self.b[0]
    }

    /// Output contribution already committed by past inputs: the next output
    /// is `feedthrough() * x + pending()`.
    pub fn pending(&self) -> f64 {
        self.state.first().copied().unwrap_or(0.0)
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.pending();
        let n = self.state.len();
        for i in 0..n {
            let carry = if i + 1 < n { self.state[i + 1] } else { 0.0 };
            self.state[i] = carry + self.b[i + 1] * x - self.a[i + 1] * y;
        }
        y
    }
}

/// Runs the difference equation over `input`, starting from `initial_state`
/// (transposed direct-form II layout) or from rest.
pub fn filter(
    tf: &TransferFunction,
    input: &[f64],
    initial_state: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if input.is_empty() {
        return Err(Error::EmptyInput("filter input"));
    }
    let mut f = match initial_state {
        Some(s) => Filter::with_state(tf, s)?,
        None => Filter::new(tf),
    };
    Ok(input.iter().map(|&x| f.step(x)).collect())
}

/// `den_G den_C + num_G num_C`, the return-difference numerator whose roots
/// are the closed-loop poles.
pub fn closed_loop_char_poly(plant: &TransferFunction, controller: &TransferFunction) -> Vec<f64> {
    poly::add(
        &poly::mul(&plant.den, &controller.den),
        &poly::mul(&plant.num, &controller.num),
    )
}

/// Closed-loop maps evaluated by [`ClosedLoopSystem::loop_response`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopTransfer {
    /// Sensitivity `1 / (1 + G C)`.
    S,
    SG,
    SC,
    SH,
    SCH,
    /// Loop gain `G C`.
    GC,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    plant: TransferFunction,
    controller: TransferFunction,
    noise_model: TransferFunction,
    char_poly: Vec<f64>,
}

impl ClosedLoopSystem {
    /// Builds the loop, rejecting ill-posed or unstable configurations and
    /// unstable noise models.
    pub fn new(
        plant: TransferFunction,
        controller: TransferFunction,
        noise_model: TransferFunction,
    ) -> Result<Self> {
        let char_poly = closed_loop_char_poly(&plant, &controller);
        if char_poly[0] == 0.0 {
            return Err(Error::IllPosedLoop);
        }
        let cl = poly::max_root_modulus(&char_poly)?;
        if cl >= 1.0 - DEFAULT_STABILITY_MARGIN {
            return Err(Error::Unstable {
                what: "closed loop".into(),
                max_modulus: cl,
            });
        }
        let h = noise_model.max_pole_modulus()?;
        if h >= 1.0 - DEFAULT_STABILITY_MARGIN {
            return Err(Error::Unstable {
                what: "noise model".into(),
                max_modulus: h,
            });
        }
        Ok(Self {
            plant,
            controller,
            noise_model,
            char_poly,
        })
    }

    /// The benchmark loop from the numerical study: a lightly damped
    /// second-order plant under a two-tap FIR controller, with third-order
    /// coloured noise.
    pub fn benchmark() -> Self {
        let plant = TransferFunction::new(vec![1.0], vec![1.0, -1.6, 0.89]).unwrap();
        let controller = TransferFunction::fir(vec![0.0, 1.0, -0.8]).unwrap();
        let noise = TransferFunction::new(
            vec![1.0, -1.56, 1.045, -0.3338],
            vec![1.0, -2.35, 2.09, -0.6675],
        )
        .unwrap();
        Self::new(plant, controller, noise).expect("benchmark loop is stable")
    }

    pub fn plant(&self) -> &TransferFunction {
        &self.plant
    }

    pub fn controller(&self) -> &TransferFunction {
        &self.controller
    }

    pub fn noise_model(&self) -> &TransferFunction {
        &self.noise_model
    }

    pub fn char_poly(&self) -> &[f64] {
        &self.char_poly
    }

    pub fn closed_loop_poles(&self) -> Result<Vec<Complex64>> {
        poly::roots(&self.char_poly)
    }

    /// Pointwise composition of the three frequency responses.
    pub fn loop_response(&self, which: LoopTransfer, omega: f64) -> Result<Complex64> {
        let g = self.plant.evaluate(omega)?;
        let c = self.controller.evaluate(omega)?;
        let gc = g * c;
        if which == LoopTransfer::GC {
            return Ok(gc);
        }
        let ret = Complex64::new(1.0, 0.0) + gc;
        if ret.norm() <= POLE_ON_CIRCLE_TOL {
            return Err(Error::PoleOnCircle { omega });
        }
        let s = ret.inv();
        Ok(match which {
            LoopTransfer::S => s,
            LoopTransfer::SG => s * g,
            LoopTransfer::SC => s * c,
            LoopTransfer::SH => s * self.noise_model.evaluate(omega)?,
            LoopTransfer::SCH => s * c * self.noise_model.evaluate(omega)?,
            LoopTransfer::GC => unreachable!(),
        })
    }

    /// Rational closed-loop map, built by polynomial arithmetic so its
    /// poles are the closed-loop poles (plus those of `H` where it appears).
    pub fn loop_transfer_function(&self, which: LoopTransfer) -> TransferFunction {
        let (g, c, h) = (&self.plant, &self.controller, &self.noise_model);
        let (num, den) = match which {
            LoopTransfer::S => (poly::mul(&g.den, &c.den), self.char_poly.clone()),
            LoopTransfer::SG => (poly::mul(&g.num, &c.den), self.char_poly.clone()),
            LoopTransfer::SC => (poly::mul(&g.den, &c.num), self.char_poly.clone()),
            LoopTransfer::SH => (
                poly::mul(&poly::mul(&g.den, &c.den), &h.num),
                poly::mul(&self.char_poly, &h.den),
            ),
            LoopTransfer::SCH => (
                poly::mul(&poly::mul(&g.den, &c.num), &h.num),
                poly::mul(&self.char_poly, &h.den),
            ),
            LoopTransfer::GC => (poly::mul(&g.num, &c.num), poly::mul(&g.den, &c.den)),
        };
        TransferFunction { num, den }
    }
}

/// Grid frequency `2 pi l / n`.
pub fn grid_omega(l: usize, n: usize) -> f64 {
    2.0 * PI * l as f64 / n as f64
}
