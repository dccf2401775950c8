//! JSON serialization for realizations.
//!
//! Complex numbers are stored as `[re, im]` pairs; matrices as row-major
//! nested arrays. The state may be given either as a `"vector"` (pure state)
//! or a `"matrix"` (density matrix); the parsed form is always a density
//! matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{projector, CMat, CVec, Realization};
use crate::error::{Error, Result};

type JsonComplex = [f64; 2];
type JsonMatrix = Vec<Vec<JsonComplex>>;

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum JsonState {
    Vector(Vec<JsonComplex>),
    Matrix(JsonMatrix),
}

#[derive(Serialize, Deserialize)]
struct JsonRealization {
    dim: usize,
    state: JsonState,
    hamiltonian: JsonMatrix,
    povms: Vec<Vec<JsonMatrix>>,
}

fn mat_to_json(m: &CMat) -> JsonMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn mat_from_json(j: &JsonMatrix, dim: usize, what: &str) -> Result<CMat> {
    if j.len() != dim || j.iter().any(|row| row.len() != dim) {
        return Err(Error::Parse(format!("{what}: expected a {dim}x{dim} matrix")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, jx| Complex64::new(j[i][jx][0], j[i][jx][1])))
}

/// Serialize a realization to a JSON string.
pub fn realization_to_json(r: &Realization) -> String {
    let doc = JsonRealization {
        dim: r.dim,
        state: JsonState::Matrix(mat_to_json(&r.state)),
        hamiltonian: mat_to_json(&r.hamiltonian),
        povms: r.povms.iter().map(|p| p.iter().map(mat_to_json).collect()).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("realization serialization cannot fail")
}

/// Parse a realization from a JSON string (state as vector or matrix).
pub fn realization_from_json(text: &str) -> Result<Realization> {
    let doc: JsonRealization =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("realization JSON: {e}")))?;
    let dim = doc.dim;
    let state = match &doc.state {
        JsonState::Vector(v) => {
            if v.len() != dim {
                return Err(Error::Parse(format!("state vector length {} != dim {dim}", v.len())));
            }
            let psi = CVec::from_iterator(dim, v.iter().map(|z| Complex64::new(z[0], z[1])));
            projector(&psi)
        }
        JsonState::Matrix(m) => mat_from_json(m, dim, "state")?,
    };
    let hamiltonian = mat_from_json(&doc.hamiltonian, dim, "hamiltonian")?;
    let mut povms = Vec::with_capacity(doc.povms.len());
    for (x, povm) in doc.povms.iter().enumerate() {
        let mut elems = Vec::with_capacity(povm.len());
        for (a, m) in povm.iter().enumerate() {
            elems.push(mat_from_json(m, dim, &format!("POVM element ({a}|{x})"))?);
        }
        povms.push(elems);
    }
    Ok(Realization { dim, state, hamiltonian, povms })
}
