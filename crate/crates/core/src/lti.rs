//! Linear time-invariant building blocks: state-space models and
//! zero/pole/gain transfer functions used for weighting filters.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block, serde_mat, Mat};

/// Discrete-time state-space model `x+ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    #[serde(with = "serde_mat")]
    pub a: Mat,
    #[serde(with = "serde_mat")]
    pub b: Mat,
    #[serde(with = "serde_mat")]
    pub c: Mat,
    #[serde(with = "serde_mat")]
    pub d: Mat,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dims("A", format!("{n}x{n}"), format!("{:?}", a.shape())));
        }
        if b.nrows() != n {
            return Err(Error::dims("B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dims("C cols", n, c.ncols()));
        }
        if d.shape() != (c.nrows(), b.ncols()) {
            return Err(Error::dims(
                "D",
                format!("{}x{}", c.nrows(), b.ncols()),
                format!("{:?}", d.shape()),
            ));
        }
        Ok(StateSpace { a, b, c, d })
    }

    /// Memoryless gain `y = D u`.
    pub fn gain(d: Mat) -> Self {
        let (p, m) = d.shape();
        StateSpace {
            a: Mat::zeros(0, 0),
            b: Mat::zeros(0, m),
            c: Mat::zeros(p, 0),
            d,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::gain(Mat::identity(n, n))
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Series connection `other ∘ self` (self's output feeds other's input).
    /// State is stacked as `(x_self, x_other)`.
    pub fn then(&self, other: &StateSpace) -> Result<StateSpace> {
        if self.n_outputs() != other.n_inputs() {
            return Err(Error::dims("series", self.n_outputs(), other.n_inputs()));
        }
        let n1 = self.n_states();
        let n2 = other.n_states();
        let a = block(&[
            &[&self.a, &Mat::zeros(n1, n2)],
            &[&(&other.b * &self.c), &other.a],
        ]);
        let b = block(&[&[&self.b], &[&(&other.b * &self.d)]]);
        let c = block(&[&[&(&other.d * &self.c), &other.c]]);
        let d = &other.d * &self.d;
        StateSpace::new(a, b, c, d)
    }

    /// Block-diagonal (parallel, non-interacting) composition.
    pub fn append(&self, other: &StateSpace) -> StateSpace {
        let diag = |x: &Mat, y: &Mat| {
            block(&[
                &[x, &Mat::zeros(x.nrows(), y.ncols())],
                &[&Mat::zeros(y.nrows(), x.ncols()), y],
            ])
        };
        StateSpace {
            a: diag(&self.a, &other.a),
            b: diag(&self.b, &other.b),
            c: diag(&self.c, &other.c),
            d: diag(&self.d, &other.d),
        }
    }

    /// `G(z) = C (zI - A)^{-1} B + D`.
    pub fn frequency_response(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.n_states();
        let to_c = |m: &Mat| m.map(|v| Complex64::new(v, 0.0));
        let d = to_c(&self.d);
        if n == 0 {
            return Ok(d);
        }
        let lhs = DMatrix::<Complex64>::identity(n, n) * z - to_c(&self.a);
        let x = lhs
            .lu()
            .solve(&to_c(&self.b))
            .ok_or(Error::BlockInverse("zI - A is singular at the evaluation point"))?;
        Ok(to_c(&self.c) * x + d)
    }

    /// Largest singular value of `G(e^{jω})` over `points` frequencies
    /// evenly spaced on `[0, π]`, refined by golden-section search around
    /// the best grid point.
    pub fn peak_gain(&self, points: usize) -> Result<f64> {
        let sigma = |w: f64| -> Result<f64> {
            let g = self.frequency_response(Complex64::from_polar(1.0, w))?;
            Ok(g.singular_values().iter().copied().fold(0.0, f64::max))
        };
        let points = points.max(2);
        let h = std::f64::consts::PI / (points - 1) as f64;
        let (mut best_w, mut best) = (0.0, sigma(0.0)?);
        for i in 1..points {
            let w = i as f64 * h;
            let s = sigma(w)?;
            if s > best {
                best = s;
                best_w = w;
            }
        }
        let (mut lo, mut hi) = ((best_w - h).max(0.0), (best_w + h).min(std::f64::consts::PI));
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            let (s1, s2) = (sigma(m1)?, sigma(m2)?);
            best = best.max(s1).max(s2);
            if s1 < s2 {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        Ok(best)
    }
}

/// SISO transfer function in zero/pole/gain form. Complex roots must come
/// in conjugate pairs; the function must be proper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub gain: f64,
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
}

const ROOT_MATCH: f64 = 1e-12;

impl TransferFunction {
    pub fn new(gain: f64, zeros: Vec<Complex64>, poles: Vec<Complex64>) -> Result<Self> {
        if zeros.len() > poles.len() {
            return Err(Error::Unsupported(format!(
                "improper transfer function ({} zeros, {} poles)",
                zeros.len(),
                poles.len()
            )));
        }
        for roots in [&zeros, &poles] {
            let mut unmatched: Vec<Complex64> = roots.iter().copied().filter(|r| r.im != 0.0).collect();
            while let Some(r) = unmatched.pop() {
                match unmatched.iter().position(|s| (s - r.conj()).norm() <= ROOT_MATCH) {
                    Some(i) => {
                        unmatched.swap_remove(i);
                    }
                    None => {
                        return Err(Error::Unsupported(format!("root {r} lacks its conjugate")))
                    }
                }
            }
        }
        Ok(TransferFunction { gain, zeros, poles })
    }

    /// Real zeros and poles only.
    pub fn real(gain: f64, zeros: &[f64], poles: &[f64]) -> Result<Self> {
        Self::new(
            gain,
            zeros.iter().map(|z| Complex64::new(*z, 0.0)).collect(),
            poles.iter().map(|p| Complex64::new(*p, 0.0)).collect(),
        )
    }

    pub fn static_gain(k: f64) -> Self {
        TransferFunction {
            gain: k,
            zeros: Vec::new(),
            poles: Vec::new(),
        }
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        let num: Complex64 = self.zeros.iter().map(|r| z - r).product();
        let den: Complex64 = self.poles.iter().map(|r| z - r).product();
        num / den * self.gain
    }

    /// Product of two transfer functions without cancellation.
    pub fn series(&self, other: &TransferFunction) -> TransferFunction {
        let mut zeros = self.zeros.clone();
        zeros.extend(&other.zeros);
        let mut poles = self.poles.clone();
        poles.extend(&other.poles);
        TransferFunction {
            gain: self.gain * other.gain,
            zeros,
            poles,
        }
    }

    /// Remove zero/pole pairs that coincide (to 1e-12). Operates on the
    /// factored coefficients, so identical factors cancel exactly.
    pub fn cancel(&self) -> TransferFunction {
        let mut zeros = self.zeros.clone();
        let mut poles = Vec::with_capacity(self.poles.len());
        for p in &self.poles {
            match zeros.iter().position(|z| (z - p).norm() <= ROOT_MATCH) {
                Some(i) => {
                    zeros.remove(i);
                }
                None => poles.push(*p),
            }
        }
        TransferFunction {
            gain: self.gain,
            zeros,
            poles,
        }
    }

    /// Move poles on the unit circle radially inward to radius `1 - eps`.
    /// Returns the perturbed function and the original positions moved.
    pub fn pull_inside_unit_circle(&self, eps: f64) -> (TransferFunction, Vec<Complex64>) {
        let mut moved = Vec::new();
        let poles = self
            .poles
            .iter()
            .map(|p| {
                if eps > 0.0 && (p.norm() - 1.0).abs() <= ROOT_MATCH {
                    moved.push(*p);
                    p / p.norm() * (1.0 - eps)
                } else {
                    *p
                }
            })
            .collect();
        (
            TransferFunction {
                gain: self.gain,
                zeros: self.zeros.clone(),
                poles,
            },
            moved,
        )
    }

    pub fn unit_circle_poles(&self) -> Vec<Complex64> {
        self.poles
            .iter()
            .copied()
            .filter(|p| (p.norm() - 1.0).abs() <= ROOT_MATCH)
            .collect()
    }

    /// Controllable canonical realization (minimal when no zero/pole
    /// pair coincides).
    pub fn realize(&self) -> StateSpace {
        let n = self.poles.len();
        let den = real_poly(&self.poles); // monic, descending powers, len n+1
        let mut num = vec![0.0; n + 1];
        let zpoly = real_poly(&self.zeros);
        let offset = n + 1 - zpoly.len();
        for (i, c) in zpoly.iter().enumerate() {
            num[offset + i] = c * self.gain;
        }
        let d0 = num[0];
        // strictly proper remainder: num - d0 * den, coefficients of q^{n-1}..q^0
        let rem: Vec<f64> = (1..=n).map(|i| num[i] - d0 * den[i]).collect();
        let mut a = Mat::zeros(n, n);
        for j in 0..n {
            a[(0, j)] = -den[j + 1];
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = Mat::zeros(n, 1);
        if n > 0 {
            b[(0, 0)] = 1.0;
        }
        let c = Mat::from_row_slice(1, n, &rem);
        let d = Mat::from_element(1, 1, d0);
        StateSpace { a, b, c, d }
    }
}

/// Monic polynomial with the given roots, descending powers, real parts.
fn real_poly(roots: &[Complex64]) -> Vec<f64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        coeffs = next;
    }
    coeffs.into_iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn on_circle(theta: f64) -> Complex64 {
        Complex64::from_polar(1.0, theta)
    }

    #[test]
    fn realization_matches_zpk() {
        let tf = TransferFunction::new(
            0.7,
            vec![Complex64::new(0.3, 0.2), Complex64::new(0.3, -0.2)],
            vec![Complex64::new(0.5, 0.0), Complex64::new(-0.2, 0.4), Complex64::new(-0.2, -0.4)],
        )
        .unwrap();
        let ss = tf.realize();
        for k in 0..20 {
            let z = on_circle(0.1 + k as f64 * PI / 20.0);
            let g = ss.frequency_response(z).unwrap()[(0, 0)];
            assert!((g - tf.eval(z)).norm() < 1e-12);
        }
    }

    #[test]
    fn cancellation_is_exact() {
        let alpha = 1.0 / PI;
        let we = TransferFunction::real(0.2, &[0.5], &[-alpha]).unwrap();
        let m = TransferFunction::real(1.0, &[-alpha], &[1.0]).unwrap();
        let c = we.series(&m).cancel();
        assert_eq!(c.zeros, vec![Complex64::new(0.5, 0.0)]);
        assert_eq!(c.poles, vec![Complex64::new(1.0, 0.0)]);
        assert_eq!(c.realize().n_states(), 1);
    }

    #[test]
    fn unit_circle_pole_moves_inward() {
        let m = TransferFunction::real(1.0, &[], &[1.0]).unwrap();
        let (p, moved) = m.pull_inside_unit_circle(1e-4);
        assert_eq!(moved.len(), 1);
        assert!((p.poles[0].re - (1.0 - 1e-4)).abs() < 1e-15);
        let (same, none) = m.pull_inside_unit_circle(0.0);
        assert!(none.is_empty());
        assert_eq!(same, m);
    }

    #[test]
    fn unpaired_complex_root_rejected() {
        assert!(TransferFunction::new(1.0, vec![], vec![Complex64::new(0.1, 0.2)]).is_err());
        assert!(TransferFunction::real(1.0, &[0.1, 0.2], &[0.3]).is_err());
    }

    #[test]
    fn series_state_space_multiplies_responses() {
        let g1 = TransferFunction::real(2.0, &[0.1], &[0.4]).unwrap().realize();
        let g2 = TransferFunction::real(-1.0, &[], &[0.6]).unwrap().realize();
        let s = g1.then(&g2).unwrap();
        for k in 0..10 {
            let z = on_circle(k as f64 * 0.3);
            let lhs = s.frequency_response(z).unwrap()[(0, 0)];
            let rhs = g1.frequency_response(z).unwrap()[(0, 0)] * g2.frequency_response(z).unwrap()[(0, 0)];
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
