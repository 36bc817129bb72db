//! Small dense-vector helpers shared by the solvers.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `‖a − b‖₂`
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `y ← y + alpha·x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// A linear map with an explicit transpose, as needed by power iteration.
pub trait LinearMap {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64>;
}

/// Row-major dense matrix, mostly useful for small checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }
}

impl LinearMap for DenseMatrix {
    fn domain_len(&self) -> usize {
        self.cols
    }

    fn range_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols).map(|row| dot(row, x)).collect()
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks(self.cols).zip(y) {
            axpy(yi, row, &mut out);
        }
        out
    }
}

/// Power iteration on `AᵀA` from a seeded random start; returns the
/// estimate of `‖A‖²`.
pub fn power_iteration<M: LinearMap + ?Sized>(map: &M, iters: usize, seed: u64) -> f64 {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, crate::rng::Purpose::PowerIteration, 0);
    let mut v: Vec<f64> = (0..map.domain_len())
        .map(|_| rng.random::<f64>() - 0.5)
        .collect();
    let n0 = norm(&v);
    if n0 == 0.0 {
        return 0.0;
    }
    scale(1.0 / n0, &mut v);
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let w = map.apply_transpose(&map.apply(&v));
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        // Rayleigh quotient, v is unit norm.
        estimate = dot(&v, &w);
        v = w;
        scale(1.0 / nw, &mut v);
    }
    estimate
}
