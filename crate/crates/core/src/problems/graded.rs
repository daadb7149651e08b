//! Heat equation on a locally refined 1D grid, split into fast and slow rows.

use std::sync::Arc;

use super::{ErrorKind, Forcing, MultirateProblem, OdeProblem, Rhs};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const FINE_LO: f64 = 0.45;
const FINE_HI: f64 = 0.55;

/// u_t = u_xx + f on (0, 1) with u = 1 on the boundary and initially, T = 1.
///
/// Cells in [0.45, 0.55] are `grading` times smaller than the coarse cells of
/// width 1/N. Rows touching a fine cell form the fast part.
pub fn build_multirate_surrogate(n_mesh: usize, grading: f64) -> Result<MultirateProblem> {
    if n_mesh < 4 {
        return Err(Error::InvalidMesh(format!("N = {n_mesh} < 4")));
    }
    if !(grading >= 1.0 && grading.is_finite()) {
        return Err(Error::InvalidMesh(format!("grading {grading} < 1")));
    }
    let segments = [
        (0.0, FINE_LO, (FINE_LO * n_mesh as f64).ceil() as usize, false),
        (FINE_LO, FINE_HI, ((FINE_HI - FINE_LO) * n_mesh as f64 * grading).ceil() as usize, true),
        (FINE_HI, 1.0, ((1.0 - FINE_HI) * n_mesh as f64).ceil() as usize, false),
    ];
    let mut nodes = vec![0.0];
    let mut fine_cell = Vec::new();
    for (lo, hi, cells, fine) in segments {
        for k in 1..=cells {
            nodes.push(if k == cells { hi } else { lo + (hi - lo) * k as f64 / cells as f64 });
            fine_cell.push(fine);
        }
    }
    let n = nodes.len() - 2;
    let mut trip = Vec::with_capacity(3 * n);
    let mut c = vec![0.0; n];
    let mut fast = vec![false; n];
    for i in 0..n {
        let k = i + 1;
        let hl = nodes[k] - nodes[k - 1];
        let hr = nodes[k + 1] - nodes[k];
        let w = 2.0 / (hl + hr);
        trip.push((i, i, -w * (1.0 / hl + 1.0 / hr)));
        if i > 0 {
            trip.push((i, i - 1, w / hl));
        } else {
            c[i] += w / hl;
        }
        if i + 1 < n {
            trip.push((i, i + 1, w / hr));
        } else {
            c[i] += w / hr;
        }
        let x = nodes[k];
        c[i] += -10.0 * (2.0 * (x - 0.501) * (x - 0.501)).ln();
        fast[i] = fine_cell[k - 1] || fine_cell[k];
    }
    let a = CsrMatrix::from_triplets(n, n, &trip);
    let slow: Vec<bool> = fast.iter().map(|f| !f).collect();
    let split = |keep: &[bool]| {
        let ck: Vec<f64> = c.iter().zip(keep).map(|(v, &k)| if k { *v } else { 0.0 }).collect();
        Rhs::new(n, Some(a.select_rows(keep)), Some(Arc::new(Forcing { c: ck })))
    };
    let problem = OdeProblem {
        name: "graded-multirate".into(),
        mesh: n_mesh,
        rhs: Rhs::new(n, Some(a.clone()), Some(Arc::new(Forcing { c: c.clone() }))),
        y0: vec![1.0; n],
        t_end: 1.0,
        error_kind: ErrorKind::Nodal,
        steady_state: None,
        params: vec![("grading", grading)],
    };
    Ok(MultirateProblem { fast: split(&fast), slow: split(&slow), problem })
}
