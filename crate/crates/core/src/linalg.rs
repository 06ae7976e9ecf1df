//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Entrywise max-abs norm. Zero for empty matrices.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Largest entry of `|m - m^T|`.
pub fn asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// 2-norm condition number from singular values.
pub fn condition_number(m: &Mat) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn spectral_radius(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max)
}

/// Assemble a dense matrix from a grid of blocks. Row heights come from the
/// first block of each row, column widths from the first row.
pub fn block(rows: &[&[&Mat]]) -> Mat {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = Mat::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (row, h) in rows.iter().zip(&heights) {
        let mut c0 = 0;
        for (blk, w) in row.iter().zip(&widths) {
            assert_eq!(blk.shape(), (*h, *w), "block shape mismatch");
            out.view_mut((r0, c0), (*h, *w)).copy_from(*blk);
            c0 += w;
        }
        r0 += h;
    }
    out
}

pub fn vstack(parts: &[&Mat]) -> Mat {
    let rows: Vec<[&Mat; 1]> = parts.iter().map(|m| [*m]).collect();
    let refs: Vec<&[&Mat]> = rows.iter().map(|r| r.as_slice()).collect();
    block(&refs)
}

pub fn hstack(parts: &[&Mat]) -> Mat {
    block(&[parts])
}

/// Row-major nested vectors, as used by the serialized formats.
pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Option<Mat> {
    let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a matrix as `{"rows": r, "cols": c, "data": [[..], ..]}`.
pub mod serde_mat {
    use super::{from_rows, to_rows, Mat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: to_rows(m),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let repr = Repr::deserialize(d)?;
        let m = from_rows(&repr.data, repr.cols)
            .filter(|m| m.shape() == (repr.rows, repr.cols))
            .ok_or_else(|| serde::de::Error::custom("ragged or mis-sized matrix"))?;
        Ok(m)
    }

    pub mod vec {
        use super::Mat;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Wrapped(#[serde(with = "super")] Mat);

        pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> Result<S::Ok, S::Error> {
            let w: Vec<Wrapped> = ms.iter().cloned().map(Wrapped).collect();
            w.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
            let w: Vec<Wrapped> = Vec::deserialize(d)?;
            Ok(w.into_iter().map(|w| w.0).collect())
        }
    }
}
