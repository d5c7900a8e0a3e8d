#![allow(dead_code)]

//! Test-only reference implementations, written independently of the
//! library so they can serve as oracles.

/// Straight-line AES-128 encryption. The S-box is derived from inversion in
/// GF(2^8) followed by the affine map instead of being copied from a table.
pub mod ref_aes {
    fn gmul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0u8;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let hi = a & 0x80;
            a <<= 1;
            if hi != 0 {
                a ^= 0x1b;
            }
            b >>= 1;
        }
        p
    }

    fn ginv(a: u8) -> u8 {
        if a == 0 {
            return 0;
        }
        // a^254 = a^-1 in GF(2^8).
        let mut result = 1u8;
        let mut base = a;
        let mut e = 254u32;
        while e > 0 {
            if e & 1 == 1 {
                result = gmul(result, base);
            }
            base = gmul(base, base);
            e >>= 1;
        }
        result
    }

    pub fn sbox(x: u8) -> u8 {
        let b = ginv(x);
        b ^ b.rotate_left(1) ^ b.rotate_left(2) ^ b.rotate_left(3) ^ b.rotate_left(4) ^ 0x63
    }

    fn expand(key: &[u8; 16]) -> [[u8; 16]; 11] {
        let mut w = [[0u8; 4]; 44];
        for i in 0..4 {
            w[i].copy_from_slice(&key[4 * i..4 * i + 4]);
        }
        let mut rcon = 1u8;
        for i in 4..44 {
            let mut t = w[i - 1];
            if i % 4 == 0 {
                t = [sbox(t[1]) ^ rcon, sbox(t[2]), sbox(t[3]), sbox(t[0])];
                rcon = gmul(rcon, 2);
            }
            for j in 0..4 {
                w[i][j] = w[i - 4][j] ^ t[j];
            }
        }
        let mut rk = [[0u8; 16]; 11];
        for r in 0..11 {
            for c in 0..4 {
                rk[r][4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
            }
        }
        rk
    }

    pub fn encrypt(key: &[u8; 16], block: &[u8; 16]) -> [u8; 16] {
        let rk = expand(key);
        // state[c*4 + r], column-major as in the standard's byte order.
        let mut s = *block;
        let add = |s: &mut [u8; 16], k: &[u8; 16]| s.iter_mut().zip(k).for_each(|(a, b)| *a ^= b);
        add(&mut s, &rk[0]);
        for (round, key) in rk.iter().enumerate().skip(1) {
            for b in s.iter_mut() {
                *b = sbox(*b);
            }
            let t = s;
            for c in 0..4 {
                for r in 0..4 {
                    s[4 * c + r] = t[4 * ((c + r) % 4) + r];
                }
            }
            if round != 10 {
                for c in 0..4 {
                    let a = [s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]];
                    for r in 0..4 {
                        s[4 * c + r] = gmul(a[r], 2) ^ gmul(a[(r + 1) % 4], 3) ^ a[(r + 2) % 4] ^ a[(r + 3) % 4];
                    }
                }
            }
            add(&mut s, key);
        }
        s
    }

    /// Coupon for `counter` under `key`: the counter as a 128-bit big-endian
    /// block, encrypted.
    pub fn coupon(key: &[u8; 16], counter: u64) -> [u8; 16] {
        encrypt(key, &(counter as u128).to_be_bytes())
    }
}

/// Expected number of distinct values among `n` uniform draws from `m`.
pub fn expected_distinct(m: u64, n: u64) -> f64 {
    m as f64 * (1.0 - (1.0 - 1.0 / m as f64).powf(n as f64))
}

/// Mean and standard deviation of the distinct count, by Monte Carlo with a
/// generator unrelated to the library's.
pub fn monte_carlo_distinct(m: u64, n: u64, trials: u32, seed: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut seen = vec![0u32; m as usize];
    let mut samples = Vec::with_capacity(trials as usize);
    for t in 1..=trials {
        let mut distinct = 0u64;
        for _ in 0..n {
            let i = rng.gen_range(0..m as usize);
            if seen[i] != t {
                seen[i] = t;
                distinct += 1;
            }
        }
        samples.push(distinct as f64);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Expected credit sequence under a decaying schedule, recomputed from
/// scratch for each redemption in `stream` (author indices in order).
pub fn decaying_oracle(stream: &[usize], authors: usize, schedule: &[u64], tail: u64, cap: u64, balance: u64) -> Vec<u64> {
    let mut rank = vec![0usize; authors];
    let mut earned = vec![0u64; authors];
    let mut total = 0u64;
    stream
        .iter()
        .map(|&a| {
            let nominal = schedule.get(rank[a]).copied().unwrap_or(tail);
            rank[a] += 1;
            let credit = nominal.min(cap - earned[a]).min(balance - total);
            earned[a] += credit;
            total += credit;
            credit
        })
        .collect()
}
