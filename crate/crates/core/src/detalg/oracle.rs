//! Independent reference computations for the determinant kernel.
//!
//! Nothing here calls the elimination kernels or the column-selection
//! enumerator of the parent module: determinants come from cofactor
//! expansion, partition sums from a brute-force scan of all `m^d`
//! assignments, and polynomial coefficients from interpolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{gamma_prime_r, gamma_r, gamma_r_minus_one, multilinear_expansion, IntMatrix, Matrix, SquareMatrix};

/// Laplace expansion along the first row. Exponential cost; `d ≤ 6` only.
pub fn cofactor_det(m: &SquareMatrix) -> f64 {
    cofactor(m.entries(), m.dim(), 0.0, |a, b| a * b, |a, b| a + b, |a| -a, |v| v)
}

/// Exact [`cofactor_det`] for integer matrices.
pub fn cofactor_det_exact(m: &IntMatrix) -> i128 {
    cofactor(m.entries(), m.dim(), 0i128, |a, b| a * b, |a, b| a + b, |a| -a, |v| v as i128)
}

fn cofactor<T: Copy, V: Copy>(
    entries: &[T],
    d: usize,
    zero: V,
    mul: impl Fn(V, V) -> V + Copy,
    add: impl Fn(V, V) -> V + Copy,
    neg: impl Fn(V) -> V + Copy,
    lift: impl Fn(T) -> V + Copy,
) -> V {
    if d == 1 {
        return lift(entries[0]);
    }
    let mut total = zero;
    let mut minor = Vec::with_capacity((d - 1) * (d - 1));
    for col in 0..d {
        minor.clear();
        for i in 1..d {
            for j in 0..d {
                if j != col {
                    minor.push(entries[i * d + j]);
                }
            }
        }
        let term = mul(lift(entries[col]), cofactor(&minor, d - 1, zero, mul, add, neg, lift));
        total = add(total, if col % 2 == 0 { term } else { neg(term) });
    }
    total
}

/// Sum of `det(G)` over every assignment of columns to sources whose
/// per-source counts equal `counts`, found by scanning all `m^d`
/// assignments with an odometer.
pub fn brute_force_partition_sum(counts: &[usize], sources: &[&IntMatrix]) -> i128 {
    let m = sources.len();
    let d = sources[0].dim();
    let mut digits = vec![0usize; d];
    let mut total = 0i128;
    let mut entries = vec![0i64; d * d];
    loop {
        let mut seen = vec![0usize; m];
        for &s in &digits {
            seen[s] += 1;
        }
        if seen == counts {
            for i in 0..d {
                for j in 0..d {
                    entries[i * d + j] = sources[digits[j]].get(i, j);
                }
            }
            let g = IntMatrix::from_row_major(d, entries.clone()).expect("valid dimension");
            total += cofactor_det_exact(&g);
        }
        let mut pos = 0;
        loop {
            if pos == d {
                return total;
            }
            digits[pos] += 1;
            if digits[pos] < m {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// Coefficients `c_0..c_d` of `h ↦ det(a + h b)` from its values at the
/// nodes `1, 1/2, …, 1/2^d` (Vandermonde solve).
pub fn pencil_coefficients(a: &SquareMatrix, b: &SquareMatrix) -> Vec<f64> {
    let d = a.dim();
    let n = d + 1;
    let nodes: Vec<f64> = (0..n).map(|k| 0.5f64.powi(k as i32)).collect();
    let vander = nalgebra::DMatrix::from_fn(n, n, |i, j| nodes[i].powi(j as i32));
    let values = nalgebra::DVector::from_iterator(n, nodes.iter().map(|&h| cofactor_det(&a.add_scaled(h, b))));
    let sol = vander.lu().solve(&values).expect("Vandermonde matrix with distinct nodes is invertible");
    sol.iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    fn int(v: i128) -> Self {
        Self { num: v, den: 1 }
    }

    fn new(num: i128, den: i128) -> Self {
        let g = gcd(num.abs(), den.abs()).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Self { num: s * num / g, den: s * den / g }
    }

    fn sub(self, o: Self) -> Self {
        Self::new(self.num * o.den - o.num * self.den, self.den * o.den)
    }

    fn add(self, o: Self) -> Self {
        Self::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    fn mul_int(self, k: i128) -> Self {
        Self::new(self.num * k, self.den)
    }

    fn div_int(self, k: i128) -> Self {
        Self::new(self.num, self.den * k)
    }
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact monomial coefficients of `h ↦ det(a + h b + h² c)` for integer
/// matrices, by Newton interpolation at the integer nodes `0..=2d`.
pub fn quadratic_pencil_coefficients(a: &IntMatrix, b: &IntMatrix, c: &IntMatrix) -> Vec<i128> {
    let d = a.dim();
    let n = 2 * d + 1;
    let values: Vec<Ratio> = (0..n as i64)
        .map(|h| {
            let entries = (0..d * d)
                .map(|k| a.entries()[k] + h * b.entries()[k] + h * h * c.entries()[k])
                .collect();
            Ratio::int(cofactor_det_exact(&IntMatrix::from_row_major(d, entries).expect("valid dimension")))
        })
        .collect();
    // Divided differences over nodes x_i = i.
    let mut coef = values;
    for level in 1..n {
        for i in (level..n).rev() {
            coef[i] = coef[i].sub(coef[i - 1]).div_int(level as i128);
        }
    }
    // Newton form to monomial form: p = c0 + (h - 0)(c1 + (h - 1)(c2 + …)).
    let mut poly = vec![Ratio::int(0); n];
    for k in (0..n).rev() {
        // poly <- poly * (h - k) + coef[k]
        let mut next = vec![Ratio::int(0); n];
        for j in 0..n {
            if poly[j].num == 0 {
                continue;
            }
            if j + 1 < n {
                next[j + 1] = next[j + 1].add(poly[j]);
            }
            next[j] = next[j].sub(poly[j].mul_int(k as i128));
        }
        next[0] = next[0].add(coef[k]);
        poly = next;
    }
    poly.iter()
        .map(|r| {
            assert_eq!(r.den, 1, "integer polynomial must have integer coefficients");
            r.num
        })
        .collect()
}

/// Pass/fail tally for one property.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct Tally {
    pub cases: usize,
    pub failures: usize,
    /// Largest observed discrepancy (absolute, or the bounded ratio for the
    /// second-order check).
    pub worst: f64,
}

impl Tally {
    fn record(&mut self, ok: bool, discrepancy: f64) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
        }
        if discrepancy > self.worst {
            self.worst = discrepancy;
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures == 0
    }
}

/// Results of [`run_suite`].
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct OracleReport {
    pub seed: u64,
    pub multilinear_exact: Tally,
    pub multilinear_float: Tally,
    pub expansion_coefficient: Tally,
    pub second_order: Tally,
    pub degeneracy: Tally,
    pub gamma_prime_enumeration: Tally,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        [
            &self.multilinear_exact,
            &self.multilinear_float,
            &self.expansion_coefficient,
            &self.second_order,
            &self.degeneracy,
            &self.gamma_prime_enumeration,
        ]
        .iter()
        .all(|t| t.passed())
    }
}

/// Tolerance of the floating multilinear check.
pub const MULTILINEAR_TOL: f64 = 1e-9;
/// Tolerance of the pencil-coefficient check.
pub const EXPANSION_TOL: f64 = 1e-8;
/// Bound on the scaled second-order remainder over `h = 2^-k`, `k = 4..=12`,
/// relative to the sum of absolute higher coefficients.
pub const SECOND_ORDER_SLACK: f64 = 1.0 + 1e-9;

pub fn random_int_matrix(rng: &mut impl Rng, d: usize, lo: i64, hi: i64) -> IntMatrix {
    let entries = (0..d * d).map(|_| rng.random_range(lo..=hi)).collect();
    IntMatrix::from_row_major(d, entries).expect("valid dimension")
}

/// Integer matrix of rank exactly `r` (checked numerically), built as a
/// product of `d×r` and `r×d` factors with small entries.
pub fn random_int_matrix_of_rank(rng: &mut impl Rng, d: usize, r: usize) -> IntMatrix {
    loop {
        let u: Vec<i64> = (0..d * r).map(|_| rng.random_range(-2..=2)).collect();
        let v: Vec<i64> = (0..r * d).map(|_| rng.random_range(-2..=2)).collect();
        let mut entries = vec![0i64; d * d];
        for i in 0..d {
            for j in 0..d {
                entries[i * d + j] = (0..r).map(|k| u[i * r + k] * v[k * d + j]).sum();
            }
        }
        let m = IntMatrix::from_row_major(d, entries).expect("valid dimension");
        let f = m.map(|x| x as f64);
        if super::rank(&f, super::DEFAULT_RANK_TOL) == r {
            return m;
        }
    }
}

fn to_f64(m: &IntMatrix) -> SquareMatrix {
    m.map(|v| v as f64)
}

fn sum_int(ms: &[IntMatrix]) -> IntMatrix {
    let d = ms[0].dim();
    let entries = (0..d * d).map(|k| ms.iter().map(|m| m.entries()[k]).sum()).collect();
    Matrix::from_row_major(d, entries).expect("valid dimension")
}

/// Runs every determinant property on `cases` random draws per property
/// (dimensions `1..=4`, entries in `[-5, 5]`).
pub fn run_suite(cases: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = OracleReport { seed, ..Default::default() };
    for case in 0..cases {
        let d = 1 + case % 4;
        let m = 1 + (case / 4) % 3;

        let mats: Vec<IntMatrix> = (0..m).map(|_| random_int_matrix(&mut rng, d, -5, 5)).collect();
        let expected = cofactor_det_exact(&sum_int(&mats));
        let exact = multilinear_expansion(&mats).expect("non-empty list");
        rep.multilinear_exact.record(exact == expected, (exact - expected).abs() as f64);
        let floats: Vec<SquareMatrix> = mats.iter().map(to_f64).collect();
        let approx = multilinear_expansion(&floats).expect("non-empty list");
        let err = (approx - expected as f64).abs();
        rep.multilinear_float.record(err <= MULTILINEAR_TOL, err);

        let r = rng.random_range(0..=d);
        let a = random_int_matrix_of_rank(&mut rng, d, r);
        let b = random_int_matrix(&mut rng, d, -5, 5);
        let coeffs = pencil_coefficients(&to_f64(&a), &to_f64(&b));
        let g = gamma_r(r, &to_f64(&a), &to_f64(&b)).expect("r in range");
        let mut worst = (coeffs[d - r] - g).abs();
        for c in &coeffs[..d - r] {
            worst = worst.max(c.abs());
        }
        rep.expansion_coefficient.record(worst <= EXPANSION_TOL, worst);

        if r < d {
            let c = random_int_matrix(&mut rng, d, -5, 5);
            rep.second_order.record_second_order(r, &a, &b, &c);
        }

        if r >= 1 {
            let deficient = random_int_matrix_of_rank(&mut rng, d, r - 1);
            let b = random_int_matrix(&mut rng, d, -5, 5);
            let v = gamma_r(r, &deficient, &b).expect("r in range");
            rep.degeneracy.record(v == 0, v.abs() as f64);
        }

        if r < d {
            let a = random_int_matrix(&mut rng, d, -5, 5);
            let c = random_int_matrix(&mut rng, d, -5, 5);
            let fast = gamma_prime_r(r, &a, &b, &c).expect("r < d");
            let slow = brute_force_partition_sum(&[r, d - r - 1, 1], &[&a, &b, &c]);
            rep.gamma_prime_enumeration.record(fast == slow, (fast - slow).abs() as f64);
        }
    }
    rep
}

impl Tally {
    /// Checks the second-order pencil expansion for `a` of rank `r`: the
    /// exact coefficients below `h^{d-r+2}` must match the γ sums, and the
    /// scaled remainder at `h = 2^-k`, `k = 4..=12`, must stay below the sum
    /// of absolute higher coefficients.
    fn record_second_order(&mut self, r: usize, a: &IntMatrix, b: &IntMatrix, c: &IntMatrix) {
        let d = a.dim();
        let coeffs = quadratic_pencil_coefficients(a, b, c);
        let lead = gamma_r(r, a, b).expect("r in range");
        let next = gamma_r_minus_one(r, a, b).expect("r in range") + gamma_prime_r(r, a, b, c).expect("r < d");
        let low_ok = coeffs[..d - r].iter().all(|&v| v == 0);
        let ok = low_ok && coeffs[d - r] == lead && coeffs[d - r + 1] == next;
        let tail_bound: f64 = coeffs[d - r + 2..].iter().map(|&v| (v as f64).abs()).sum();
        // Scaled remainder (det - leading terms) / h^{d-r+2}, evaluated from
        // the exact coefficients so that tiny h loses no precision.
        let mut ratio_max = 0.0f64;
        for k in 4..=12 {
            let h = 0.5f64.powi(k);
            let scaled: f64 = coeffs[d - r + 2..]
                .iter()
                .enumerate()
                .map(|(j, &v)| v as f64 * h.powi(j as i32))
                .sum();
            ratio_max = ratio_max.max(scaled.abs());
        }
        let bounded = ratio_max <= SECOND_ORDER_SLACK * tail_bound.max(1.0);
        self.record(ok && bounded, ratio_max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cofactor_small() {
        let m = IntMatrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(cofactor_det_exact(&m), -2);
        assert_eq!(cofactor_det(&SquareMatrix::identity(4)), 1.0);
    }

    #[test]
    fn quadratic_pencil_d1() {
        // det(a + h b + h² c) = 2 + 3h + 7h².
        let a = IntMatrix::from_row_major(1, vec![2]).unwrap();
        let b = IntMatrix::from_row_major(1, vec![3]).unwrap();
        let c = IntMatrix::from_row_major(1, vec![7]).unwrap();
        assert_eq!(quadratic_pencil_coefficients(&a, &b, &c), vec![2, 3, 7]);
    }

    #[test]
    fn pencil_d2_identity() {
        // det(I + h I) = (1 + h)², coefficients 1, 2, 1.
        let c = pencil_coefficients(&SquareMatrix::identity(2), &SquareMatrix::identity(2));
        for (got, want) in c.iter().zip([1.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn brute_force_matches_hand_case() {
        let a = IntMatrix::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap();
        let b = IntMatrix::from_rows(&[vec![0, 0], vec![0, 1]]).unwrap();
        assert_eq!(brute_force_partition_sum(&[1, 1], &[&a, &b]), 1);
    }

    #[test]
    fn suite_passes() {
        let rep = run_suite(240, 7);
        assert!(rep.passed(), "{rep:#?}");
    }
}
