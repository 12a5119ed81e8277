//! Seed derivation. Every random draw in an experiment is keyed by the master
//! seed plus a path of tags, so samples can be generated in any order.

/// One round of the SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `master` with each tag in turn.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(master), |s, &t| splitmix64(s ^ splitmix64(t.wrapping_mul(0xd6e8_feb8_6659_fd93))))
}

/// Purpose tags used with [`derive_seed`].
pub mod tag {
    pub const CHANNEL: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const BCD: u64 = 3;
    pub const RANDOM: u64 = 4;
    pub const GBDT: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const TRAIN: u64 = 10;
    pub const TEST: u64 = 11;
    pub const EVAL: u64 = 12;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_value() {
        // first output of SplitMix64 seeded with 0
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn tags_separate_streams() {
        let a = derive_seed(7, &[tag::TRAIN, tag::CHANNEL, 0]);
        let b = derive_seed(7, &[tag::TRAIN, tag::NOISE, 0]);
        let c = derive_seed(7, &[tag::TEST, tag::CHANNEL, 0]);
        let d = derive_seed(7, &[tag::TRAIN, tag::CHANNEL, 1]);
        assert!(a != b && a != c && a != d && b != c);
        assert_eq!(a, derive_seed(7, &[tag::TRAIN, tag::CHANNEL, 0]));
    }
}
