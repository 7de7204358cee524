//! Seed derivation so independent random decisions (subset selection, column
//! choice, factor init) never share an RNG stream.

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Mixes a base seed with a salt into a new seed.
pub(crate) fn mix(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

/// Mixes a base seed with two salts (e.g. a fraction's bit pattern and a
/// replication index).
pub(crate) fn mix3(base: u64, a: u64, b: u64) -> u64 {
    mix(mix(base, a), b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_salts_give_distinct_seeds() {
        let s = 42;
        assert_ne!(mix(s, 0), mix(s, 1));
        assert_ne!(mix3(s, 1, 2), mix3(s, 2, 1));
        assert_eq!(mix3(s, 1, 2), mix3(s, 1, 2));
    }
}
