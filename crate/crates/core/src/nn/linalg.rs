//! Row-major dense kernels on flat `f64` buffers.

/// `y = x * w^T` where `x` is `rows x in_d` and `w` is `out_d x in_d`.
pub fn matmul_wt(x: &[f64], rows: usize, in_d: usize, w: &[f64], out_d: usize, y: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * in_d);
    debug_assert_eq!(w.len(), out_d * in_d);
    debug_assert_eq!(y.len(), rows * out_d);
    if rows == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            rows,
            in_d,
            out_d,
            1.0,
            x.as_ptr(),
            in_d as isize,
            1,
            w.as_ptr(),
            1,
            in_d as isize,
            0.0,
            y.as_mut_ptr(),
            out_d as isize,
            1,
        );
    }
}

/// `dx += dy * w` where `dy` is `rows x out_d` and `w` is `out_d x in_d`.
pub fn matmul_acc(dy: &[f64], rows: usize, out_d: usize, w: &[f64], in_d: usize, dx: &mut [f64]) {
    debug_assert_eq!(dy.len(), rows * out_d);
    debug_assert_eq!(dx.len(), rows * in_d);
    if rows == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            rows,
            out_d,
            in_d,
            1.0,
            dy.as_ptr(),
            out_d as isize,
            1,
            w.as_ptr(),
            in_d as isize,
            1,
            1.0,
            dx.as_mut_ptr(),
            in_d as isize,
            1,
        );
    }
}

/// `dw += dy^T * x` where `dy` is `rows x out_d`, `x` is `rows x in_d`.
pub fn matmul_tn_acc(
    dy: &[f64],
    rows: usize,
    out_d: usize,
    x: &[f64],
    in_d: usize,
    dw: &mut [f64],
) {
    debug_assert_eq!(dw.len(), out_d * in_d);
    if rows == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            out_d,
            rows,
            in_d,
            1.0,
            dy.as_ptr(),
            1,
            out_d as isize,
            x.as_ptr(),
            in_d as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            in_d as isize,
            1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_match_naive() {
        let (rows, i, o) = (3, 4, 2);
        let x: Vec<f64> = (0..rows * i).map(|v| v as f64 * 0.5 - 1.0).collect();
        let w: Vec<f64> = (0..o * i).map(|v| (v as f64).sin()).collect();
        let mut y = vec![0.0; rows * o];
        matmul_wt(&x, rows, i, &w, o, &mut y);
        for r in 0..rows {
            for c in 0..o {
                let e: f64 = (0..i).map(|k| x[r * i + k] * w[c * i + k]).sum();
                assert!((y[r * o + c] - e).abs() < 1e-12);
            }
        }
        let dy: Vec<f64> = (0..rows * o).map(|v| v as f64 - 2.0).collect();
        let mut dx = vec![1.0; rows * i];
        matmul_acc(&dy, rows, o, &w, i, &mut dx);
        for r in 0..rows {
            for k in 0..i {
                let e: f64 = 1.0 + (0..o).map(|c| dy[r * o + c] * w[c * i + k]).sum::<f64>();
                assert!((dx[r * i + k] - e).abs() < 1e-12);
            }
        }
        let mut dw = vec![0.0; o * i];
        matmul_tn_acc(&dy, rows, o, &x, i, &mut dw);
        for c in 0..o {
            for k in 0..i {
                let e: f64 = (0..rows).map(|r| dy[r * o + c] * x[r * i + k]).sum();
                assert!((dw[c * i + k] - e).abs() < 1e-12);
            }
        }
    }
}
