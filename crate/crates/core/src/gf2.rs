//! Rank over GF(2) of bit-packed row vectors (bit `j` of a row is coordinate `j`).

/// Rank by Gaussian elimination; rows are consumed as an XOR basis.
pub fn rank(rows: &[u64]) -> usize {
    // basis[b] holds a vector whose highest set bit is b
    let mut basis = [0u64; 64];
    let mut r = 0;
    for &row in rows {
        let mut v = row;
        while v != 0 {
            let top = 63 - v.leading_zeros() as usize;
            if basis[top] == 0 {
                basis[top] = v;
                r += 1;
                break;
            }
            v ^= basis[top];
        }
    }
    r
}

/// `<a, x>` over GF(2).
pub fn parity(a: u64, x: u64) -> bool {
    (a & x).count_ones() % 2 == 1
}
