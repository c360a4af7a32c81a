use super::{DataError, Sample};

/// How to divide samples into train and test sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitPolicy {
    /// Each user goes wholly to one side, chosen by a seeded hash of the
    /// user id: test when `hash / 2^64 < test_fraction`.
    UserHash { test_fraction: f64, seed: u64 },
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // Final avalanche so nearby ids spread over the unit interval.
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Returns `(train, test)`, preserving the input order within each side.
pub fn split(
    samples: &[Sample],
    policy: SplitPolicy,
) -> Result<(Vec<Sample>, Vec<Sample>), DataError> {
    match policy {
        SplitPolicy::UserHash {
            test_fraction,
            seed,
        } => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(DataError::InvalidSplit(format!(
                    "test fraction must be in (0, 1), got {test_fraction}"
                )));
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for s in samples {
                let u = fnv1a(seed, s.user.as_bytes()) as f64 / 2f64.powi(64);
                if u < test_fraction {
                    test.push(s.clone());
                } else {
                    train.push(s.clone());
                }
            }
            Ok((train, test))
        }
    }
}
