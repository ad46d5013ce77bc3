use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa == sb {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: sa,
            right: sb,
        })
    }
}

/// Mean pinball loss `mean_i max(τ_i r_i, (τ_i − 1) r_i)` with `r = y − q̂`,
/// written as `τ r + relu(−r)` so the gradient is `−τ` for r > 0 and `1 − τ`
/// for r < 0.
pub fn pinball_loss(tape: &mut Tape, y: Var, qhat: Var, tau: Var) -> Result<Var> {
    same_shape(tape, "pinball_loss", y, qhat)?;
    same_shape(tape, "pinball_loss", y, tau)?;
    let r = tape.sub(y, qhat)?;
    let tr = tape.mul(tau, r)?;
    let neg = tape.neg(r);
    let hinge = tape.relu(neg);
    let per_row = tape.add(tr, hinge)?;
    Ok(tape.mean(per_row, Axis::All))
}

pub fn mse_loss(tape: &mut Tape, y: Var, yhat: Var) -> Result<Var> {
    same_shape(tape, "mse_loss", y, yhat)?;
    let r = tape.sub(y, yhat)?;
    let sq = tape.square(r);
    Ok(tape.mean(sq, Axis::All))
}

/// Local Moran's I of an `n × 1` column on the tape, with row-standardized
/// weights `w`. Matches `spatial::local_morans_i`, including the all-zero
/// result for a constant column.
pub fn morans_i(tape: &mut Tape, values: Var, w: &Tensor) -> Result<Var> {
    let n = tape.value(values).rows();
    if tape.value(values).cols() != 1 || w.shape() != (n, n) {
        return Err(Error::Shape {
            op: "morans_i",
            left: tape.value(values).shape(),
            right: w.shape(),
        });
    }
    let mean = tape.mean(values, Axis::All);
    let z = tape.sub(values, mean)?;
    let z2 = tape.square(z);
    let m2 = tape.mean(z2, Axis::All);
    if tape.value(m2).item() <= f64::MIN_POSITIVE {
        return Ok(tape.constant(Tensor::zeros(n, 1)));
    }
    let w = tape.constant(w.clone());
    let lag = tape.matmul(w, z)?;
    let num = tape.mul(z, lag)?;
    tape.div(num, m2)
}

/// `MSE(ŷ, y) + λ · MSE(I(ŷ), I(y))` with Moran's I on the batch graph.
pub fn pegnn_loss(tape: &mut Tape, y: Var, yhat: Var, w: &Tensor, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let base = mse_loss(tape, y, yhat)?;
    if lambda == 0.0 {
        return Ok(base);
    }
    let iy = morans_i(tape, y, w)?;
    let iyhat = morans_i(tape, yhat, w)?;
    let aux = mse_loss(tape, iy, iyhat)?;
    let aux = tape.scale(aux, lambda);
    tape.add(base, aux)
}

/// Loss of a `PE-GNN` whose Moran head predicts `I(y)` directly:
/// `MSE(ŷ, y) + λ · MSE(Î, I(y))`.
pub fn pegnn_head_loss(tape: &mut Tape, y: Var, yhat: Var, moran_hat: Var, w: &Tensor, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let base = mse_loss(tape, y, yhat)?;
    if lambda == 0.0 {
        return Ok(base);
    }
    let iy = morans_i(tape, y, w)?;
    let aux = mse_loss(tape, iy, moran_hat)?;
    let aux = tape.scale(aux, lambda);
    tape.add(base, aux)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::pinball;
    use crate::spatial::{local_morans_i, SpatialGraph};

    fn col(tape: &mut Tape, v: &[f64]) -> Var {
        tape.leaf(Tensor::column(v))
    }

    #[test]
    fn pinball_values_and_gradient() {
        let mut tape = Tape::new();
        let y = col(&mut tape, &[1.0, -1.0, 0.3]);
        let q = col(&mut tape, &[0.0, 0.0, 0.0]);
        let t = tape.constant(Tensor::column(&[0.9, 0.9, 0.5]));
        let l = pinball_loss(&mut tape, y, q, t).unwrap();
        let want = (0.9 + 0.1 + 0.15) / 3.0;
        assert!((tape.value(l).item() - want).abs() < 1e-15);
        tape.backward(l).unwrap();
        let g = tape.grad(q).data().to_vec();
        // r > 0 → −τ/n, r < 0 → (1 − τ)/n
        assert!((g[0] + 0.9 / 3.0).abs() < 1e-15);
        assert!((g[1] - 0.1 / 3.0).abs() < 1e-15);
        assert!((g[2] + 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pinball_minimizer_by_grid_search() {
        let sample = [1.0, 2.0, 3.0, 4.0];
        let loss = |q: f64| sample.iter().map(|y| pinball(0.25, y - q)).sum::<f64>() / 4.0;
        let grid: Vec<f64> = (0..=500).map(|i| i as f64 * 0.01).collect();
        let best = grid.iter().cloned().fold(f64::INFINITY, |b, q| b.min(loss(q)));
        assert!((loss(1.5) - best).abs() < 1e-12);
        assert!(loss(1.5) <= loss(0.5) && loss(1.5) <= loss(2.5));
        assert!((loss(1.0) - loss(2.0)).abs() < 1e-12);
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::new();
        let y = col(&mut tape, &[0.0, 0.0]);
        let yh = col(&mut tape, &[1.0, 1.0]);
        let l = mse_loss(&mut tape, y, yh).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        let short = col(&mut tape, &[1.0]);
        assert!(mse_loss(&mut tape, y, short).is_err());
    }

    fn two_node_plus() -> SpatialGraph {
        let a = Tensor::from_rows(&[
            vec![0.0, 1.0, 0.5],
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0],
        ])
        .unwrap();
        SpatialGraph::from_parts(vec![vec![]; 3], a).unwrap()
    }

    #[test]
    fn morans_i_matches_spatial_module() {
        let g = two_node_plus();
        let w = g.row_standardized();
        let v = [1.0, 3.0, -2.0];
        let mut tape = Tape::new();
        let x = col(&mut tape, &v);
        let i = morans_i(&mut tape, x, &w).unwrap();
        let want = local_morans_i(&v, &g).unwrap();
        for (a, b) in tape.value(i).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = col(&mut tape, &[2.0, 2.0, 2.0]);
        let ic = morans_i(&mut tape, c, &w).unwrap();
        assert!(tape.value(ic).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pegnn_loss_composition() {
        let g = two_node_plus();
        let w = g.row_standardized();
        let (yv, yh) = ([1.0, 3.0, -2.0], [0.5, 2.0, -1.0]);
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::column(&yv));
        let p = col(&mut tape, &yh);
        let l0 = pegnn_loss(&mut tape, y, p, &w, 0.0).unwrap();
        let m = mse_loss(&mut tape, y, p).unwrap();
        assert_eq!(tape.value(l0).item(), tape.value(m).item());

        let l1 = pegnn_loss(&mut tape, y, p, &w, 1.0).unwrap();
        let (iy, ih) = (local_morans_i(&yv, &g).unwrap(), local_morans_i(&yh, &g).unwrap());
        let moran_mse = iy.iter().zip(&ih).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0;
        let mse = yv.iter().zip(&yh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0;
        assert!((tape.value(l1).item() - (mse + moran_mse)).abs() < 1e-12);

        let same = col(&mut tape, &yv);
        let z = pegnn_loss(&mut tape, y, same, &w, 2.0).unwrap();
        assert_eq!(tape.value(z).item(), 0.0);
        assert!(pegnn_loss(&mut tape, y, p, &w, -1.0).is_err());
    }
}
