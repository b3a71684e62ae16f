//! Exact linear algebra over the rationals.
//!
//! Everything here works on small integer matrices (0/1 model matrices and
//! their integer relatives), so arbitrary-precision rationals are cheap and
//! every rank or kernel decision is exact.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

pub(crate) type QMatrix = Vec<Vec<BigRational>>;

pub(crate) fn to_rational(rows: &[Vec<i64>]) -> QMatrix {
    rows.iter()
        .map(|r| {
            r.iter()
                .map(|&v| BigRational::from_integer(BigInt::from(v)))
                .collect()
        })
        .collect()
}

/// Reduced row echelon form in place. Returns the pivot column of each
/// non-zero row, in order.
pub(crate) fn rref(m: &mut QMatrix) -> Vec<usize> {
    let nrows = m.len();
    let ncols = m.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == nrows {
            break;
        }
        let Some(p) = (r..nrows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for v in m[r].iter_mut() {
            *v *= &inv;
        }
        let pivot_row = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= &f * pv;
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub(crate) fn rank(rows: &[Vec<i64>]) -> usize {
    let mut m = to_rational(rows);
    rref(&mut m).len()
}

/// Index of the first row that lies in the span of the rows before it.
pub(crate) fn first_dependent_row(rows: &[Vec<i64>]) -> Option<usize> {
    (0..rows.len()).find(|&k| rank(&rows[..=k]) < k + 1)
}

/// Rows of `a` stacked on rows of `b`.
pub(crate) fn stacked(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    a.iter().chain(b).cloned().collect()
}

/// Scales a rational vector to the primitive integer vector with the same
/// direction and sign: denominators cleared, then the content divided out.
fn primitive_integer(v: &[BigRational]) -> Vec<BigInt> {
    let lcm = v.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
    let ints: Vec<BigInt> = v.iter().map(|x| (x * &lcm).to_integer()).collect();
    let gcd = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    if gcd.is_zero() {
        return ints;
    }
    ints.into_iter().map(|x| x / &gcd).collect()
}

/// Integer basis of the right null space `{x : M x = 0}`.
///
/// One vector per free column: the free variable is set to 1, the pivot
/// variables solved for, and the vector reduced to its primitive integer form.
pub(crate) fn integer_nullspace(rows: &[Vec<i64>], ncols: usize) -> Vec<Vec<i64>> {
    let mut m = to_rational(rows);
    let pivots = rref(&mut m);
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![BigRational::zero(); ncols];
            v[f] = BigRational::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -m[r][f].clone();
            }
            primitive_integer(&v)
                .into_iter()
                .map(|x| x.to_i64().expect("kernel entry exceeds i64"))
                .collect()
        })
        .collect()
}

/// Solves `c' M = target` for a rational coefficient vector `c`, if one exists.
pub(crate) fn row_combination(rows: &[Vec<i64>], target: &[i64]) -> Option<Vec<BigRational>> {
    let nrows = rows.len();
    let ncols = target.len();
    // Augmented transpose: [M' | target].
    let mut m: QMatrix = (0..ncols)
        .map(|c| {
            let mut r: Vec<BigRational> = (0..nrows)
                .map(|j| BigRational::from_integer(BigInt::from(rows[j][c])))
                .collect();
            r.push(BigRational::from_integer(BigInt::from(target[c])));
            r
        })
        .collect();
    let pivots = rref(&mut m);
    if pivots.last() == Some(&nrows) {
        return None;
    }
    let mut coeffs = vec![BigRational::zero(); nrows];
    for (r, &pc) in pivots.iter().enumerate() {
        coeffs[pc] = m[r][nrows].clone();
    }
    Some(coeffs)
}
