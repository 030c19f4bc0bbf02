//! Serde adapters for dense matrices.
//!
//! The on-disk layout is `{ "rows": m, "cols": n, "data": [..] }` with `data`
//! in row-major order, so serialized worlds and fit results can be consumed
//! without nalgebra.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn serialize<S: Serializer>(matrix: &DMatrix<f64>, serializer: S) -> Result<S::Ok, S::Error> {
    let (rows, cols) = matrix.shape();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            data.push(matrix[(r, c)]);
        }
    }
    MatrixRepr { rows, cols, data }.serialize(serializer)
}

pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<DMatrix<f64>, D::Error> {
    let repr = MatrixRepr::deserialize(deserializer)?;
    if repr.data.len() != repr.rows * repr.cols {
        return Err(D::Error::custom(format!(
            "matrix payload has {} entries, expected {}x{}",
            repr.data.len(),
            repr.rows,
            repr.cols
        )));
    }
    Ok(DMatrix::from_row_slice(repr.rows, repr.cols, &repr.data))
}
