use num_bigint::BigUint;

/// 256-bin histogram of a single-channel sample.
pub fn histogram<I: IntoIterator<Item = u8>>(values: I) -> [u64; 256] {
    let mut h = [0u64; 256];
    for v in values {
        h[v as usize] += 1;
    }
    h
}

/// Threshold `t` maximising between-class variance when class 0 is
/// `[0, t]`. Ties go to the smallest `t`, and candidates start at the
/// first occupied bin, so a single-bin histogram yields that bin.
///
/// With `w0 = |{v <= t}|`, `s0 = sum{v <= t}`, `N` and `S` the totals,
/// the variance is `(s0 N - w0 S)^2 / (N^2 w0 (N - w0))`; the common
/// `N^2` is dropped and ratios are compared exactly.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let first = hist.iter().position(|&c| c > 0).unwrap_or(0);

    let mut best_t = first;
    let mut best_num = BigUint::from(0u8);
    let mut best_den = BigUint::from(1u8);
    let (mut w0, mut s0) = (0u128, 0u128);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as u128;
        s0 += t as u128 * c as u128;
        if t < first || w0 == 0 || w0 == n {
            continue;
        }
        let a = BigUint::from(s0) * n;
        let b = BigUint::from(w0) * s;
        let diff = if a > b { a - b } else { b - a };
        let num = &diff * &diff;
        let den = BigUint::from(w0) * BigUint::from(n - w0);
        if &num * &best_den > &best_num * &den {
            best_t = t;
            best_num = num;
            best_den = den;
        }
    }
    best_t as u8
}
