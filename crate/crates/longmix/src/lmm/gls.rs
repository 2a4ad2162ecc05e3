//! Generalized least squares by per-block Cholesky whitening, and the
//! profiled REML/ML objective built on it.
//!
//! Everything here works block by block: each random-intercept group
//! contributes one positive-definite covariance block, which is factored as
//! `V = L Lᵀ`; solving against `L` whitens that group's slice of `X` and `y`.
//! No covariance matrix is ever inverted explicitly. The log-determinants
//! that the likelihood needs fall out of the same factorizations.

use super::cov::fill_group_cov;
use super::{LmmError, VarianceParams};
use crate::dataset::{DesignMatrices, ModelSpec};
use crate::linalg::{
    backward_solve_transposed, cholesky_in_place, forward_solve, log_det_from_factor, Matrix,
};

const LN_2PI: f64 = 1.8378770664093453;

/// Result of a GLS solve: coefficient estimates, their covariance
/// `(XᵀV⁻¹X)⁻¹`, the weighted residual sum of squares `rᵀV⁻¹r`, and the two
/// log-determinants the likelihood needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsFit {
    pub beta: Vec<f64>,
    pub beta_cov: Matrix,
    pub weighted_rss: f64,
    /// log |V| accumulated over blocks.
    pub log_det_v: f64,
    /// log |XᵀV⁻¹X|.
    pub log_det_xtvx: f64,
}

/// Generalized least squares with a block-diagonal covariance.
///
/// `v_blocks` cover consecutive row spans of `X`/`y` in order; their sizes
/// must sum to the number of rows. Each block is Cholesky-factored and used
/// to whiten its span, after which the solution comes from the accumulated
/// normal equations.
///
/// ```
/// use longmix::linalg::Matrix;
/// // X = column of ones, y = (0, 3), V = diag(1, 4): beta = 0.75/1.25 = 0.6.
/// let x = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
/// let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]);
/// let fit = longmix::lmm::gls_estimate(&x, &[0.0, 3.0], &[v]).unwrap();
/// assert!((fit.beta[0] - 0.6).abs() < 1e-12);
/// ```
pub fn gls_estimate(x: &Matrix, y: &[f64], v_blocks: &[Matrix]) -> Result<GlsFit, LmmError> {
    let n = x.n_rows();
    let p = x.n_cols();
    assert_eq!(y.len(), n, "response length must match design rows");
    let total: usize = v_blocks.iter().map(Matrix::n_rows).sum();
    assert_eq!(total, n, "covariance blocks must cover every row exactly once");

    let mut acc = NormalEqAccumulator::new(p);
    let mut l_buf: Vec<f64> = Vec::new();
    let mut wy: Vec<f64> = Vec::new();
    let mut wx: Vec<f64> = Vec::new();
    let mut offset = 0;
    for (bi, block) in v_blocks.iter().enumerate() {
        let m = block.n_rows();
        assert_eq!(block.n_cols(), m, "covariance blocks must be square");
        l_buf.clear();
        l_buf.extend_from_slice(block.as_slice());
        cholesky_in_place(&mut l_buf, m).map_err(|_| LmmError::NonPositiveDefiniteV {
            group: format!("block {bi}"),
        })?;
        wy.resize(m, 0.0);
        wx.resize(m * p, 0.0);
        acc.add_block(&l_buf, m, x, y, offset, &mut wy, &mut wx);
        offset += m;
    }
    acc.finish()
}

/// Running normal-equation state shared by [`gls_estimate`] and the
/// objective workspace: `A = Σ X̃ᵀX̃`, `b = Σ X̃ᵀỹ`, `ỹᵀỹ`, and `log |V|`.
struct NormalEqAccumulator {
    p: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    yty: f64,
    log_det_v: f64,
}

impl NormalEqAccumulator {
    fn new(p: usize) -> Self {
        NormalEqAccumulator { p, a: vec![0.0; p * p], b: vec![0.0; p], yty: 0.0, log_det_v: 0.0 }
    }

    fn reset(&mut self) {
        self.a.fill(0.0);
        self.b.fill(0.0);
        self.yty = 0.0;
        self.log_det_v = 0.0;
    }

    /// Whiten one block (rows `offset..offset+m`) against its Cholesky factor
    /// and fold it into the normal equations. `wy` and `wx` are caller-owned
    /// scratch of sizes `m` and `m·p` (whitened X is stored column-major).
    fn add_block(
        &mut self,
        l: &[f64],
        m: usize,
        x: &Matrix,
        y: &[f64],
        offset: usize,
        wy: &mut [f64],
        wx: &mut [f64],
    ) {
        let p = self.p;
        self.log_det_v += 2.0 * log_det_from_factor(l, m);
        wy[..m].copy_from_slice(&y[offset..offset + m]);
        forward_solve(l, m, &mut wy[..m]);
        for j in 0..p {
            let col = &mut wx[j * m..(j + 1) * m];
            for (i, c) in col.iter_mut().enumerate() {
                *c = x[(offset + i, j)];
            }
            forward_solve(l, m, col);
        }
        for j in 0..p {
            let col_j = &wx[j * m..(j + 1) * m];
            for k in 0..=j {
                let col_k = &wx[k * m..(k + 1) * m];
                let dot: f64 = col_j.iter().zip(col_k).map(|(a, b)| a * b).sum();
                self.a[j * p + k] += dot;
            }
            let dot: f64 = col_j.iter().zip(wy[..m].iter()).map(|(a, b)| a * b).sum();
            self.b[j] += dot;
        }
        self.yty += wy[..m].iter().map(|v| v * v).sum::<f64>();
    }

    /// Solve the accumulated system and package the fit.
    fn finish(&self) -> Result<GlsFit, LmmError> {
        let p = self.p;
        let mut a_full = Matrix::zeros(p, p);
        for j in 0..p {
            for k in 0..=j {
                a_full[(j, k)] = self.a[j * p + k];
                a_full[(k, j)] = self.a[j * p + k];
            }
        }
        let mut l = a_full.as_slice().to_vec();
        cholesky_in_place(&mut l, p).map_err(|e| LmmError::SingularDesign {
            column: format!("column {}", e.0),
        })?;
        let log_det_xtvx = 2.0 * log_det_from_factor(&l, p);
        let mut beta = self.b.clone();
        forward_solve(&l, p, &mut beta);
        backward_solve_transposed(&l, p, &mut beta);
        let beta_cov = crate::linalg::spd_inverse(&a_full).map_err(|e| {
            LmmError::SingularDesign { column: format!("column {}", e.0) }
        })?;
        // rᵀV⁻¹r = ỹᵀỹ − bᵀβ̂, exact because β̂ solves Aβ = b.
        let btb: f64 = self.b.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let weighted_rss = (self.yty - btb).max(0.0);
        Ok(GlsFit { beta, beta_cov, weighted_rss, log_det_v: self.log_det_v, log_det_xtvx })
    }

    /// Objective-only variant of [`finish`]: the pieces of −2ℓ without
    /// forming the coefficient covariance.
    fn finish_nll_parts(&self) -> Result<(f64, f64, f64), LmmError> {
        let p = self.p;
        let mut l = vec![0.0; p * p];
        for j in 0..p {
            for k in 0..=j {
                l[j * p + k] = self.a[j * p + k];
                l[k * p + j] = self.a[j * p + k];
            }
        }
        cholesky_in_place(&mut l, p).map_err(|e| LmmError::SingularDesign {
            column: format!("column {}", e.0),
        })?;
        let log_det_xtvx = 2.0 * log_det_from_factor(&l, p);
        let mut beta = self.b.clone();
        forward_solve(&l, p, &mut beta);
        backward_solve_transposed(&l, p, &mut beta);
        let btb: f64 = self.b.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let rss = (self.yty - btb).max(0.0);
        Ok((self.log_det_v, log_det_xtvx, rss))
    }
}

/// Negative (restricted) log-likelihood at the given variance parameters.
///
/// REML: −2ℓ_R = (n−p)·log 2π + log|V| + log|XᵀV⁻¹X| + rᵀV⁻¹r with
/// r = y − Xβ̂(V); ML drops the log|XᵀV⁻¹X| term and uses n. The returned
/// value is −ℓ (half of the above).
pub fn objective(
    vp: &VarianceParams,
    design: &DesignMatrices,
    y: &[f64],
    spec: &ModelSpec,
) -> Result<f64, LmmError> {
    let mut ws = ObjectiveWorkspace::new(design, y, spec);
    ws.eval(vp)
}

/// Reusable evaluation state for the objective: per-group layout plus every
/// scratch buffer the block loop needs, so repeated evaluations during
/// optimization allocate nothing.
pub(crate) struct ObjectiveWorkspace<'a> {
    design: &'a DesignMatrices,
    y: &'a [f64],
    spec: &'a ModelSpec,
    n: usize,
    p: usize,
    /// Start row of each group (groups cover contiguous, ordered spans).
    group_starts: Vec<usize>,
    /// True when every group has the same series layout (sizes and time
    /// points), so all covariance blocks are equal and one Cholesky
    /// factorization per evaluation serves every group.
    shared_layout: bool,
    acc: NormalEqAccumulator,
    v: Vec<f64>,
    wy: Vec<f64>,
    wx: Vec<f64>,
}

impl<'a> ObjectiveWorkspace<'a> {
    pub fn new(design: &'a DesignMatrices, y: &'a [f64], spec: &'a ModelSpec) -> Self {
        let n = design.x.n_rows();
        let p = design.x.n_cols();
        assert_eq!(y.len(), n);
        let mut group_starts = Vec::with_capacity(design.groups.len());
        let mut start = 0;
        let mut max_m = 0;
        for g in &design.groups {
            group_starts.push(start);
            // The canonical ordering makes each group's rows one contiguous
            // run; the whole engine relies on that.
            debug_assert!(g
                .series
                .iter()
                .flat_map(|&si| design.series[si].rows.iter().copied())
                .eq(start..start + g.n_obs));
            start += g.n_obs;
            max_m = max_m.max(g.n_obs);
        }
        assert_eq!(start, n, "groups must partition the rows");
        let layout_of = |g: &crate::dataset::Group| -> Vec<&[u32]> {
            g.series.iter().map(|&si| design.series[si].time_points.as_slice()).collect()
        };
        let shared_layout = design
            .groups
            .split_first()
            .is_some_and(|(first, rest)| {
                let reference = layout_of(first);
                rest.iter().all(|g| layout_of(g) == reference)
            });
        ObjectiveWorkspace {
            design,
            y,
            spec,
            n,
            p,
            group_starts,
            shared_layout,
            acc: NormalEqAccumulator::new(p),
            v: vec![0.0; max_m * max_m],
            wy: vec![0.0; max_m],
            wx: vec![0.0; max_m * p],
        }
    }

    /// Evaluate −ℓ at `vp`.
    pub fn eval(&mut self, vp: &VarianceParams) -> Result<f64, LmmError> {
        vp.validate(self.spec.corr_family)?;
        self.accumulate(vp)?;
        let (log_det_v, log_det_xtvx, rss) = self.acc.finish_nll_parts()?;
        let (n, p) = (self.n as f64, self.p as f64);
        let minus_two_ll = match self.spec.method {
            crate::dataset::FitMethod::Reml => {
                (n - p) * LN_2PI + log_det_v + log_det_xtvx + rss
            }
            crate::dataset::FitMethod::Ml => n * LN_2PI + log_det_v + rss,
        };
        Ok(0.5 * minus_two_ll)
    }

    /// Run the block loop at `vp`, leaving the accumulated normal equations
    /// in `self.acc`.
    fn accumulate(&mut self, vp: &VarianceParams) -> Result<(), LmmError> {
        self.acc.reset();
        for (gi, group) in self.design.groups.iter().enumerate() {
            let m = group.n_obs;
            // Under a shared layout every block is the same matrix, so the
            // factor from the first group is reused for the rest.
            if !(self.shared_layout && gi > 0) {
                fill_group_cov(&mut self.v, group, &self.design.series, vp, self.spec.corr_family);
                cholesky_in_place(&mut self.v[..m * m], m).map_err(|_| {
                    LmmError::NonPositiveDefiniteV { group: group.label.clone() }
                })?;
            }
            self.acc.add_block(
                &self.v[..m * m],
                m,
                &self.design.x,
                self.y,
                self.group_starts[gi],
                &mut self.wy,
                &mut self.wx,
            );
        }
        Ok(())
    }
}
