//! splitmix64 stream used for every seeded quantity in the harness.
//!
//! The generator and the `u64 -> f64` mapping are fixed so that fixture
//! models and test sets are bit-identical across implementations.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in `[0, 1)` from the top 53 bits of the next draw.
    pub fn next_unit(&mut self) -> f64 {
        unit_from_bits(self.next_u64())
    }
}

pub fn unit_from_bits(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_published_vectors() {
        // Rosetta Code splitmix64 task, seed 1234567.
        let mut rng = SplitMix64::new(1_234_567);
        let expected = [
            6_457_827_717_110_365_317u64,
            3_203_168_211_198_807_973,
            9_817_491_932_198_370_423,
            4_593_380_528_125_082_431,
            16_408_922_859_458_223_821,
        ];
        for want in expected {
            assert_eq!(rng.next_u64(), want);
        }
    }

    #[test]
    fn golden_gamma_seed_first_three_draws() {
        // Seed 0 yields 0xE220A8397B1DCDAF first; seeding with the gamma
        // itself skips that draw, so the next two seed-0 draws follow.
        let mut rng = SplitMix64::new(GOLDEN_GAMMA);
        assert_eq!(rng.next_u64(), 7_960_286_522_194_355_700);
        assert_eq!(rng.next_u64(), 487_617_019_471_545_679);
        assert_eq!(rng.next_u64(), 17_909_611_376_780_542_444);

        let mut zero = SplitMix64::new(0);
        assert_eq!(zero.next_u64(), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn unit_mapping_bounds() {
        assert_eq!(unit_from_bits(0), 0.0);
        let top = unit_from_bits(u64::MAX);
        assert!(top < 1.0);
        assert_eq!(top, 1.0 - f64::EPSILON / 2.0);
    }
}
