//! Exact linear-separability test by phase-one simplex over rationals.
//!
//! Points `P` and `N` are strictly separable iff some `(w, c)` satisfies
//! `w.v - c >= 1` on `P` and `c - w.v >= 1` on `N`. Free variables are split
//! into positive and negative parts; Bland's rule rules out cycling.

use num_rational::Ratio;

type Q = Ratio<i128>;

/// Whether `positive` points can be cut from the rest by a hyperplane.
pub fn separable(points: &[Vec<i64>], positive: &[bool]) -> bool {
    let d = points.first().map_or(0, Vec::len) + 1;
    let rows: Vec<Vec<i128>> = points
        .iter()
        .zip(positive)
        .map(|(v, &pos)| {
            let sign = if pos { 1 } else { -1 };
            let mut row: Vec<i128> = v.iter().map(|&x| sign * x as i128).collect();
            row.push(-sign);
            row
        })
        .collect();
    feasible_ge_one(&rows, d)
}

/// Feasibility of `A x >= 1` with `x` free.
fn feasible_ge_one(a: &[Vec<i128>], d: usize) -> bool {
    let m = a.len();
    if m == 0 {
        return true;
    }
    // Columns: x+ (d), x- (d), surplus (m), artificial (m), rhs.
    let cols = 2 * d + 2 * m;
    let zero = Q::from_integer(0);
    let one = Q::from_integer(1);
    let mut t: Vec<Vec<Q>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = vec![zero; cols + 1];
            for j in 0..d {
                r[j] = Q::from_integer(row[j]);
                r[d + j] = Q::from_integer(-row[j]);
            }
            r[2 * d + i] = -one;
            r[2 * d + m + i] = one;
            r[cols] = one;
            r
        })
        .collect();
    let mut basis: Vec<usize> = (0..m).map(|i| 2 * d + m + i).collect();
    let mut obj = vec![zero; cols + 1];
    for r in &t {
        for j in 0..=cols {
            obj[j] -= r[j];
        }
    }
    for i in 0..m {
        obj[2 * d + m + i] = zero;
    }

    loop {
        let Some(enter) = (0..cols).find(|&j| obj[j] < zero) else {
            break;
        };
        let mut leave: Option<(usize, Q)> = None;
        for i in 0..m {
            if t[i][enter] > zero {
                let ratio = t[i][cols] / t[i][enter];
                let better = match &leave {
                    None => true,
                    Some((k, best)) => ratio < *best || (ratio == *best && basis[i] < basis[*k]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            // Unbounded in phase one cannot happen; the objective is bounded below by 0.
            unreachable!("phase-one objective is bounded");
        };
        let pivot = t[r][enter];
        for j in 0..=cols {
            t[r][j] /= pivot;
        }
        for i in 0..m {
            if i != r && t[i][enter] != zero {
                let f = t[i][enter];
                for j in 0..=cols {
                    let delta = f * t[r][j];
                    t[i][j] -= delta;
                }
            }
        }
        let f = obj[enter];
        for j in 0..=cols {
            let delta = f * t[r][j];
            obj[j] -= delta;
        }
        basis[r] = enter;
    }
    obj[cols] == zero
}

/// Vertices of `{0,1}^dim`, vertex `v` having coordinate `j` equal to bit `j` of `v`.
pub fn cube(dim: usize) -> Vec<Vec<i64>> {
    (0..1u32 << dim).map(|v| (0..dim).map(|j| (v >> j & 1) as i64).collect()).collect()
}

/// Number of vertex subsets of `{0,1}^dim` cut off by some hyperplane.
pub fn count_threshold_subsets(dim: usize) -> usize {
    let vertices = cube(dim);
    let k = vertices.len();
    (0u64..1 << k)
        .filter(|mask| {
            let positive: Vec<bool> = (0..k).map(|v| mask >> v & 1 == 1).collect();
            separable(&vertices, &positive)
        })
        .count()
}

/// Vertex masks (bit `v` set for positive vertex `v`) that are separable.
pub fn threshold_masks(dim: usize) -> Vec<u32> {
    let vertices = cube(dim);
    let k = vertices.len();
    (0u32..1 << k)
        .filter(|mask| {
            let positive: Vec<bool> = (0..k).map(|v| mask >> v & 1 == 1).collect();
            separable(&vertices, &positive)
        })
        .collect()
}
