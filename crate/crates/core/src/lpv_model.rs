//! Affine-in-scheduling state-space models over vertex polytopes.
//!
//! Every scheduling-dependent matrix is an [`AffineMatrixFunction`]
//! `M(ρ) = M_0 + Σ_i ρ_i M_i`. Because evaluation is affine, a convex
//! combination of scheduling points maps to the same convex combination of
//! evaluated matrices; the vertex-based LMI machinery relies on this.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block, serde_mat, Mat};
use crate::lti::StateSpace;
use crate::polytope::SchedulingPolytope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMatrixFunction {
    #[serde(with = "serde_mat")]
    constant: Mat,
    #[serde(with = "serde_mat::vec")]
    coeffs: Vec<Mat>,
}

impl AffineMatrixFunction {
    pub fn new(constant: Mat, coeffs: Vec<Mat>) -> Result<Self> {
        if let Some(bad) = coeffs.iter().find(|m| m.shape() != constant.shape()) {
            return Err(Error::dims(
                "affine coefficient",
                format!("{:?}", constant.shape()),
                format!("{:?}", bad.shape()),
            ));
        }
        Ok(AffineMatrixFunction { constant, coeffs })
    }

    /// Constant function with `n_rho` zero coefficients.
    pub fn constant(m: Mat, n_rho: usize) -> Self {
        let coeffs = vec![Mat::zeros(m.nrows(), m.ncols()); n_rho];
        AffineMatrixFunction { constant: m, coeffs }
    }

    pub fn zeros(rows: usize, cols: usize, n_rho: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols), n_rho)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn n_rho(&self) -> usize {
        self.coeffs.len()
    }

    pub fn constant_term(&self) -> &Mat {
        &self.constant
    }

    pub fn coefficients(&self) -> &[Mat] {
        &self.coeffs
    }

    /// All matrices `[M_0, M_1, .., M_nρ]`.
    pub fn terms(&self) -> impl Iterator<Item = &Mat> {
        std::iter::once(&self.constant).chain(self.coeffs.iter())
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(|m| m.iter().all(|v| *v == 0.0))
    }

    pub fn evaluate(&self, rho: &[f64]) -> Result<Mat> {
        if rho.len() != self.coeffs.len() {
            return Err(Error::dims("scheduling point", self.coeffs.len(), rho.len()));
        }
        let mut out = self.constant.clone();
        for (r, m) in rho.iter().zip(&self.coeffs) {
            if *r != 0.0 {
                out += m * *r;
            }
        }
        Ok(out)
    }

    /// Evaluation at every vertex of `p`, in vertex order.
    pub fn vertex_images(&self, p: &SchedulingPolytope) -> Result<Vec<Mat>> {
        p.vertices().iter().map(|v| self.evaluate(v)).collect()
    }

    /// Apply the same linear map to every term.
    pub fn map(&self, f: impl Fn(&Mat) -> Mat) -> Result<Self> {
        Self::new(f(&self.constant), self.coeffs.iter().map(&f).collect())
    }

    /// Re-express with `n_rho` coefficients. Only constant functions can
    /// change their scheduling dimension.
    pub fn with_n_rho(&self, n_rho: usize) -> Result<Self> {
        if n_rho == self.n_rho() {
            return Ok(self.clone());
        }
        if !self.is_constant() {
            return Err(Error::dims("scheduling dimension", self.n_rho(), n_rho));
        }
        Ok(Self::constant(self.constant.clone(), n_rho))
    }

    /// Pointwise product `self(ρ) · other(ρ)`. Affine only when at most
    /// one factor depends on ρ.
    pub fn mul(&self, other: &AffineMatrixFunction) -> Result<Self> {
        if self.ncols() != other.nrows() {
            return Err(Error::dims("affine product", self.ncols(), other.nrows()));
        }
        match (self.is_constant(), other.is_constant()) {
            (true, _) => {
                let left = &self.constant;
                other.map(|m| left * m)
            }
            (false, true) => {
                let right = &other.constant;
                self.map(|m| m * right)
            }
            (false, false) => Err(Error::AffineClosure(
                "both factors depend on the scheduling variable".into(),
            )),
        }
    }

    pub fn add(&self, other: &AffineMatrixFunction) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                "affine sum",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        let (a, b) = align(self, other)?;
        Self::new(
            &a.constant + &b.constant,
            a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y).collect(),
        )
    }

    pub fn transpose(&self) -> Self {
        AffineMatrixFunction {
            constant: self.constant.transpose(),
            coeffs: self.coeffs.iter().map(Mat::transpose).collect(),
        }
    }

    pub fn rows(&self, r: Range<usize>) -> Self {
        let take = |m: &Mat| m.rows(r.start, r.len()).into_owned();
        AffineMatrixFunction {
            constant: take(&self.constant),
            coeffs: self.coeffs.iter().map(take).collect(),
        }
    }

    pub fn columns(&self, c: Range<usize>) -> Self {
        let take = |m: &Mat| m.columns(c.start, c.len()).into_owned();
        AffineMatrixFunction {
            constant: take(&self.constant),
            coeffs: self.coeffs.iter().map(take).collect(),
        }
    }

    fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    /// Block assembly of affine functions sharing a scheduling dimension
    /// (constant blocks are lifted).
    pub fn block(rows: &[&[&AffineMatrixFunction]]) -> Result<Self> {
        let n_rho = rows
            .iter()
            .flat_map(|r| r.iter())
            .map(|f| f.n_rho())
            .max()
            .unwrap_or(0);
        let lifted: Vec<Vec<AffineMatrixFunction>> = rows
            .iter()
            .map(|r| r.iter().map(|f| f.with_n_rho(n_rho)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let term = |k: Option<usize>| {
            let mats: Vec<Vec<&Mat>> = lifted
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|f| match k {
                            None => &f.constant,
                            Some(i) => &f.coeffs[i],
                        })
                        .collect()
                })
                .collect();
            let refs: Vec<&[&Mat]> = mats.iter().map(|r| r.as_slice()).collect();
            block(&refs)
        };
        Self::new(term(None), (0..n_rho).map(|i| term(Some(i))).collect())
    }
}

fn align(
    a: &AffineMatrixFunction,
    b: &AffineMatrixFunction,
) -> Result<(AffineMatrixFunction, AffineMatrixFunction)> {
    let n = a.n_rho().max(b.n_rho());
    Ok((a.with_n_rho(n)?, b.with_n_rho(n)?))
}

/// Free-function form of [`AffineMatrixFunction::evaluate`].
pub fn evaluate(f: &AffineMatrixFunction, rho: &[f64]) -> Result<Mat> {
    f.evaluate(rho)
}

/// Free-function form of [`AffineMatrixFunction::vertex_images`].
pub fn vertex_images(f: &AffineMatrixFunction, p: &SchedulingPolytope) -> Result<Vec<Mat>> {
    f.vertex_images(p)
}

/// Named, contiguous slices over an index range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPartition {
    channels: Vec<Channel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl ChannelPartition {
    /// Consecutive channels in the given order; tiling holds by construction.
    pub fn new(sizes: &[(&str, usize)]) -> Result<Self> {
        let mut channels = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for (name, len) in sizes {
            if channels.iter().any(|c: &Channel| c.name == *name) {
                return Err(Error::InvalidPartition(format!("duplicate channel {name}")));
            }
            channels.push(Channel {
                name: (*name).to_string(),
                start,
                len: *len,
            });
            start += len;
        }
        Ok(ChannelPartition { channels })
    }

    pub fn single(name: &str, len: usize) -> Self {
        Self::new(&[(name, len)]).expect("single channel")
    }

    pub fn total(&self) -> usize {
        self.channels.iter().map(|c| c.len).sum()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn range(&self, name: &str) -> Result<Range<usize>> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.start..c.start + c.len)
            .ok_or_else(|| Error::InvalidPartition(format!("no channel named {name}")))
    }

    fn validate(&self) -> Result<()> {
        let mut next = 0;
        for c in &self.channels {
            if c.start != next {
                return Err(Error::InvalidPartition(format!(
                    "channel {} starts at {} (expected {next})",
                    c.name, c.start
                )));
            }
            next += c.len;
        }
        Ok(())
    }
}

/// `x+ = A(ρ) x + B(ρ) v`, `o = C(ρ) x + D(ρ) v` with named input and
/// output channels, defined over a scheduling polytope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLpvStateSpace {
    pub a: AffineMatrixFunction,
    pub b: AffineMatrixFunction,
    pub c: AffineMatrixFunction,
    pub d: AffineMatrixFunction,
    pub polytope: SchedulingPolytope,
    pub inputs: ChannelPartition,
    pub outputs: ChannelPartition,
}

impl AffineLpvStateSpace {
    pub fn new(
        a: AffineMatrixFunction,
        b: AffineMatrixFunction,
        c: AffineMatrixFunction,
        d: AffineMatrixFunction,
        polytope: SchedulingPolytope,
        inputs: ChannelPartition,
        outputs: ChannelPartition,
    ) -> Result<Self> {
        let n_rho = polytope.dim();
        let lift = |f: AffineMatrixFunction| f.with_n_rho(n_rho);
        let sys = AffineLpvStateSpace {
            a: lift(a)?,
            b: lift(b)?,
            c: lift(c)?,
            d: lift(d)?,
            polytope,
            inputs,
            outputs,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Constant model over a single-vertex polytope at the origin of ℝ¹.
    pub fn from_lti(ss: &StateSpace, inputs: ChannelPartition, outputs: ChannelPartition) -> Result<Self> {
        let p = SchedulingPolytope::point(vec![0.0])?;
        Self::lti_over(ss, p, inputs, outputs)
    }

    /// Constant model over a given polytope.
    pub fn lti_over(
        ss: &StateSpace,
        polytope: SchedulingPolytope,
        inputs: ChannelPartition,
        outputs: ChannelPartition,
    ) -> Result<Self> {
        let k = polytope.dim();
        Self::new(
            AffineMatrixFunction::constant(ss.a.clone(), k),
            AffineMatrixFunction::constant(ss.b.clone(), k),
            AffineMatrixFunction::constant(ss.c.clone(), k),
            AffineMatrixFunction::constant(ss.d.clone(), k),
            polytope,
            inputs,
            outputs,
        )
    }

    fn validate(&self) -> Result<()> {
        let n = self.a.shape().0;
        if self.a.shape() != (n, n) {
            return Err(Error::dims("A", format!("{n}x{n}"), format!("{:?}", self.a.shape())));
        }
        let n_in = self.b.shape().1;
        let n_out = self.c.shape().0;
        if self.b.shape().0 != n {
            return Err(Error::dims("B rows", n, self.b.shape().0));
        }
        if self.c.shape().1 != n {
            return Err(Error::dims("C cols", n, self.c.shape().1));
        }
        if self.d.shape() != (n_out, n_in) {
            return Err(Error::dims(
                "D",
                format!("{n_out}x{n_in}"),
                format!("{:?}", self.d.shape()),
            ));
        }
        self.inputs.validate()?;
        self.outputs.validate()?;
        if self.inputs.total() != n_in {
            return Err(Error::InvalidPartition(format!(
                "input channels cover {} of {n_in} inputs",
                self.inputs.total()
            )));
        }
        if self.outputs.total() != n_out {
            return Err(Error::InvalidPartition(format!(
                "output channels cover {} of {n_out} outputs",
                self.outputs.total()
            )));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.a.shape().0
    }

    pub fn n_in(&self) -> usize {
        self.b.shape().1
    }

    pub fn n_out(&self) -> usize {
        self.c.shape().0
    }

    pub fn n_rho(&self) -> usize {
        self.polytope.dim()
    }

    pub fn is_constant(&self) -> bool {
        [&self.a, &self.b, &self.c, &self.d]
            .iter()
            .all(|f| f.is_constant())
    }

    /// Frozen LTI model at `rho`.
    pub fn at(&self, rho: &[f64]) -> Result<StateSpace> {
        StateSpace::new(
            self.a.evaluate(rho)?,
            self.b.evaluate(rho)?,
            self.c.evaluate(rho)?,
            self.d.evaluate(rho)?,
        )
    }

    /// `B` restricted to one input channel.
    pub fn b_channel(&self, input: &str) -> Result<AffineMatrixFunction> {
        Ok(self.b.columns(self.inputs.range(input)?))
    }

    /// `C` restricted to one output channel.
    pub fn c_channel(&self, output: &str) -> Result<AffineMatrixFunction> {
        Ok(self.c.rows(self.outputs.range(output)?))
    }

    /// `D` block from one input channel to one output channel.
    pub fn d_channel(&self, output: &str, input: &str) -> Result<AffineMatrixFunction> {
        Ok(self
            .d
            .rows(self.outputs.range(output)?)
            .columns(self.inputs.range(input)?))
    }
}

/// Series composition: `sys1`'s outputs drive `sys2`'s inputs. State is
/// stacked as `(x1, x2)`; inputs come from `sys1`, outputs from `sys2`.
///
/// The cross products `B2 C1`, `B2 D1`, `D2 C1`, `D2 D1` must stay affine,
/// so at most one side of each product may depend on the scheduling.
pub fn series_interconnect(
    sys1: &AffineLpvStateSpace,
    sys2: &AffineLpvStateSpace,
) -> Result<AffineLpvStateSpace> {
    if sys1.n_out() != sys2.n_in() {
        return Err(Error::dims("series interconnection", sys1.n_out(), sys2.n_in()));
    }
    let polytope = match (sys1.is_constant(), sys2.is_constant()) {
        (_, true) => sys1.polytope.clone(),
        (true, false) => sys2.polytope.clone(),
        (false, false) => {
            if sys1.polytope != sys2.polytope {
                return Err(Error::AffineClosure(
                    "both systems are scheduled over different polytopes".into(),
                ));
            }
            sys1.polytope.clone()
        }
    };
    let k = polytope.dim();
    let lift = |f: &AffineMatrixFunction| f.with_n_rho(k);
    let (a1, b1, c1, d1) = (lift(&sys1.a)?, lift(&sys1.b)?, lift(&sys1.c)?, lift(&sys1.d)?);
    let (a2, b2, c2, d2) = (lift(&sys2.a)?, lift(&sys2.b)?, lift(&sys2.c)?, lift(&sys2.d)?);
    let closure = |e: Error| match e {
        Error::AffineClosure(_) => Error::AffineClosure(
            "both systems are scheduling-dependent in a composed product".into(),
        ),
        other => other,
    };
    let b2c1 = b2.mul(&c1).map_err(closure)?;
    let b2d1 = b2.mul(&d1).map_err(closure)?;
    let d2c1 = d2.mul(&c1).map_err(closure)?;
    let d2d1 = d2.mul(&d1).map_err(closure)?;
    let (n1, n2) = (sys1.n_x(), sys2.n_x());
    let z12 = AffineMatrixFunction::zeros(n1, n2, k);
    let a = AffineMatrixFunction::block(&[&[&a1, &z12], &[&b2c1, &a2]])?;
    let b = AffineMatrixFunction::block(&[&[&b1], &[&b2d1]])?;
    let c = AffineMatrixFunction::block(&[&[&d2c1, &c2]])?;
    AffineLpvStateSpace::new(
        a,
        b,
        c,
        d2d1,
        polytope,
        sys1.inputs.clone(),
        sys2.outputs.clone(),
    )
}
