//! Monotone (sorted northwest-corner) plan for one-dimensional problems
//! with strictly convex `h(x - y)` costs, where the co-monotone coupling is
//! optimal.

use alloc::vec::Vec;

/// Builds the co-monotone plan between weighted atoms at positions `x_pos`
/// (masses `mu`) and `y_pos` (masses `nu`). Ties in position break by index,
/// making the result deterministic. Returns dense `m x s` flows.
pub fn monotone_plan(x_pos: &[f64], mu: &[f64], y_pos: &[f64], nu: &[f64]) -> Vec<f64> {
    let m = mu.len();
    let s = nu.len();
    let mut xi: Vec<usize> = (0..m).collect();
    xi.sort_by(|&a, &b| x_pos[a].partial_cmp(&x_pos[b]).unwrap().then(a.cmp(&b)));
    let mut yi: Vec<usize> = (0..s).collect();
    yi.sort_by(|&a, &b| y_pos[a].partial_cmp(&y_pos[b]).unwrap().then(a.cmp(&b)));

    let mut flow = alloc::vec![0.0; m * s];
    let mut a = 0usize;
    let mut b = 0usize;
    let mut rem_a = mu[xi[0]];
    let mut rem_b = nu[yi[0]];
    loop {
        let t = rem_a.min(rem_b);
        flow[xi[a] * s + yi[b]] += t;
        rem_a -= t;
        rem_b -= t;
        if a == m - 1 && b == s - 1 {
            break;
        }
        if rem_a <= rem_b && a < m - 1 {
            a += 1;
            rem_a = mu[xi[a]];
        } else if b < s - 1 {
            b += 1;
            rem_b = nu[yi[b]];
        } else {
            a += 1;
            rem_a = mu[xi[a]];
        }
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_pairing_for_equal_masses() {
        let x = [0.0, 0.5];
        let y = [0.9, 0.2]; // unsorted on purpose
        let f = monotone_plan(&x, &[0.5, 0.5], &y, &[0.5, 0.5]);
        // 0 -> 0.2, 0.5 -> 0.9
        assert!((f[1] - 0.5).abs() < 1e-15);
        assert!((f[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn splits_masses_monotonically() {
        let x = [0.0, 1.0];
        let y = [0.0, 0.5, 1.0];
        let f = monotone_plan(&x, &[0.5, 0.5], &y, &[0.25, 0.5, 0.25]);
        assert!((f[0] - 0.25).abs() < 1e-15);
        assert!((f[1] - 0.25).abs() < 1e-15);
        assert!((f[4] - 0.25).abs() < 1e-15);
        assert!((f[5] - 0.25).abs() < 1e-15);
    }
}
