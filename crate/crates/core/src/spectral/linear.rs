use super::PEnergy;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `K x` for the `p = 2` stiffness `E(x) = xᵀ K x`.
pub(crate) fn apply_stiffness<E: PEnergy>(energy: &E, x: &[f64], out: &mut [f64]) {
    energy.energy_grad(x, out);
    out.iter_mut().for_each(|v| *v *= 0.5);
}

/// Preconditioned conjugate gradients for `K x = b` with `b ⟂ 1`.
/// The singular direction (constants) is left untouched in `x`.
/// Returns the iteration count.
pub(crate) fn pcg<E: PEnergy>(energy: &E, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> usize {
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut kx = vec![0.0; n];
    apply_stiffness(energy, x, &mut kx);
    for k in 0..n {
        r[k] = b[k] - kx[k];
    }
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return 0;
    }
    let mut z = vec![0.0; n];
    energy.precondition(&r, &mut z);
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut kd = vec![0.0; n];
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= rel_tol * b_norm {
            return it;
        }
        apply_stiffness(energy, &d, &mut kd);
        let dkd = dot(&d, &kd);
        if dkd <= 0.0 {
            return it;
        }
        let alpha = rz / dkd;
        for k in 0..n {
            x[k] += alpha * d[k];
            r[k] -= alpha * kd[k];
        }
        energy.precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            d[k] = z[k] + beta * d[k];
        }
    }
    max_iter
}
