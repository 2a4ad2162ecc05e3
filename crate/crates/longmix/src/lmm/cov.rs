//! Within-series correlation matrices and the per-group marginal covariance
//! blocks they roll up into.

use super::{LmmError, VarianceParams};
use crate::dataset::{CorrFamily, DesignMatrices};
use crate::linalg::Matrix;

/// Correlation matrix of a length-`n` series at unit index spacing.
///
/// AR1: entry (i, j) = ρ^|i−j|. Compound symmetric: ρ off the diagonal.
/// Independent: the identity (ρ ignored).
///
/// ```
/// use longmix::dataset::CorrFamily;
/// let r = longmix::lmm::correlation_matrix(CorrFamily::Ar1, 0.5, 3).unwrap();
/// assert_eq!(r.to_nested(), vec![
///     vec![1.0, 0.5, 0.25],
///     vec![0.5, 1.0, 0.5],
///     vec![0.25, 0.5, 1.0],
/// ]);
/// ```
pub fn correlation_matrix(family: CorrFamily, rho: f64, n: usize) -> Result<Matrix, LmmError> {
    let indices: Vec<u32> = (0..n as u32).collect();
    correlation_matrix_at(family, rho, &indices)
}

/// Correlation matrix over explicit time-point indices: the AR1 exponent is
/// the index distance `|t_i − t_j|`, so a series with a gap keeps the same
/// correlations it would have inside a complete grid.
pub fn correlation_matrix_at(
    family: CorrFamily,
    rho: f64,
    time_points: &[u32],
) -> Result<Matrix, LmmError> {
    check_rho(family, rho)?;
    let n = time_points.len();
    let mut m = Matrix::identity(n);
    match family {
        CorrFamily::Independent => {}
        CorrFamily::CompoundSymmetric => {
            for i in 0..n {
                for j in 0..i {
                    m[(i, j)] = rho;
                    m[(j, i)] = rho;
                }
            }
        }
        CorrFamily::Ar1 => {
            for i in 0..n {
                for j in 0..i {
                    let gap = time_points[i].abs_diff(time_points[j]);
                    let r = rho.powi(gap as i32);
                    m[(i, j)] = r;
                    m[(j, i)] = r;
                }
            }
        }
    }
    Ok(m)
}

fn check_rho(family: CorrFamily, rho: f64) -> Result<(), LmmError> {
    let ok = match family {
        CorrFamily::Independent => true,
        CorrFamily::Ar1 => rho > -1.0 && rho < 1.0,
        CorrFamily::CompoundSymmetric => (0.0..1.0).contains(&rho),
    };
    if ok {
        Ok(())
    } else {
        Err(LmmError::RhoOutOfDomain { rho, family })
    }
}

/// Marginal covariance of each random-intercept group, in group order.
///
/// Within a group the covariance is `σ_b²·J + σ_ε²·blockdiag(R_s)`: the
/// all-ones matrix `J` spans the whole group (every pair of the group's
/// observations shares the intercept), while the residual correlation `R_s`
/// lives inside each within-day series and never crosses a day boundary.
/// Block rows follow the group's concatenated series in canonical order.
pub fn marginal_covariance(
    vp: &VarianceParams,
    design: &DesignMatrices,
    family: CorrFamily,
) -> Result<Vec<Matrix>, LmmError> {
    vp.validate(family)?;
    let mut blocks = Vec::with_capacity(design.groups.len());
    for group in &design.groups {
        let n = group.n_obs;
        let mut v = Matrix::zeros(n, n);
        fill_group_cov(v.as_mut_slice(), group, &design.series, vp, family);
        blocks.push(v);
    }
    Ok(blocks)
}

/// Write one group's marginal covariance into a flat row-major `n×n` buffer
/// (`n = group.n_obs`). Shared by [`marginal_covariance`] and the
/// allocation-free objective evaluation so both paths assemble identical
/// blocks. Assumes `vp` was already validated for `family`.
pub(crate) fn fill_group_cov(
    buf: &mut [f64],
    group: &crate::dataset::Group,
    all_series: &[crate::dataset::Series],
    vp: &VarianceParams,
    family: CorrFamily,
) {
    let n = group.n_obs;
    let rho = vp.rho.unwrap_or(0.0);
    buf[..n * n].fill(vp.sigma_b2);
    let mut offset = 0;
    for &si in &group.series {
        let tps = &all_series[si].time_points;
        let m = tps.len();
        for i in 0..m {
            let gi = offset + i;
            buf[gi * n + gi] += vp.sigma_e2;
            for j in 0..i {
                let gj = offset + j;
                let c = match family {
                    CorrFamily::Independent => 0.0,
                    CorrFamily::CompoundSymmetric => rho,
                    CorrFamily::Ar1 => rho.powi(tps[i].abs_diff(tps[j]) as i32),
                };
                let val = vp.sigma_e2 * c;
                buf[gi * n + gj] += val;
                buf[gj * n + gi] += val;
            }
        }
        offset += m;
    }
    debug_assert_eq!(offset, n);
}
