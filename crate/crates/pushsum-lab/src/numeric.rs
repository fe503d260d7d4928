//! Small vector/matrix norm helpers shared across modules.

pub fn vec_l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn vec_l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn vec_l2_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Entrywise L1 norm of a stack of row vectors (sum of absolute entries).
pub fn mat_l1(rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| vec_l1(r)).sum()
}

/// Frobenius norm of a stack of row vectors.
pub fn mat_frobenius(rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| vec_l2_sq(r)).sum::<f64>().sqrt()
}

/// Componentwise mean of row vectors.
pub fn mean_row(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    out
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
