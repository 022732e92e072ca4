use super::ModelError;

/// True iff some prime square divides `n`.
pub fn is_nsqf(n: u64) -> Result<bool, ModelError> {
    if n == 0 {
        return Err(ModelError::Domain("is_nsqf undefined for 0".into()));
    }
    let mut m = n;
    let mut p = 2u64;
    while p * p <= m {
        if m % p == 0 {
            m /= p;
            if m % p == 0 {
                return Ok(true);
            }
            while m % p == 0 {
                m /= p;
            }
        }
        p += if p == 2 { 1 } else { 2 };
    }
    Ok(false)
}

fn primes_up_to(n: u64) -> Vec<u64> {
    let n = n as usize;
    let mut composite = vec![false; n + 1];
    let mut out = Vec::new();
    for i in 2..=n {
        if !composite[i] {
            out.push(i as u64);
            let mut j = i * i;
            while j <= n {
                composite[j] = true;
                j += i;
            }
        }
    }
    out
}

/// Ascending NSQF integers in `[lo, hi]`; empty when `lo > hi`.
pub fn nsqf_in_range(lo: u64, hi: u64) -> Vec<u64> {
    let lo = lo.max(1);
    if lo > hi {
        return Vec::new();
    }
    let len = (hi - lo + 1) as usize;
    let mut marked = vec![false; len];
    for p in primes_up_to((hi as f64).sqrt() as u64 + 1) {
        let sq = p * p;
        if sq > hi {
            break;
        }
        let mut m = lo.div_ceil(sq) * sq;
        while m <= hi {
            marked[(m - lo) as usize] = true;
            m += sq;
        }
    }
    marked
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| lo + i as u64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert!(is_nsqf(12).unwrap());
        assert!(!is_nsqf(30).unwrap());
        assert!(!is_nsqf(1).unwrap());
        assert!(is_nsqf(150_528).unwrap());
        assert!(is_nsqf(0).is_err());
    }

    #[test]
    fn ranges() {
        assert_eq!(nsqf_in_range(8, 12), vec![8, 9, 12]);
        assert!(nsqf_in_range(2, 3).is_empty());
        assert!(nsqf_in_range(5, 4).is_empty());
        let brute = (1..=100u64).filter(|&n| is_nsqf(n).unwrap()).count();
        assert_eq!(nsqf_in_range(1, 100).len(), brute);
    }

    #[test]
    fn large_prime_square() {
        // 1_000_003 is prime
        let n = 1_000_003u64 * 1_000_003;
        assert!(is_nsqf(n).unwrap());
        assert!(!is_nsqf(1_000_003 * 2).unwrap());
    }
}
