//! Seeded pseudo-random source shared by every stochastic step of the pipeline.
//!
//! The generator is xoshiro256++ with its state expanded from a `u64` seed by
//! splitmix64. Normals come from the Box–Muller transform, consuming two
//! uniforms per pair and caching the second value of each pair, so a stream of
//! normals is fully determined by the seed and the number of prior draws.

/// splitmix64 step, used for seeding and for deriving per-index sub-seeds.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for item `index` of a stream seeded by `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut s = seed ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    splitmix64(&mut s);
    splitmix64(&mut s)
}

/// Number of `u64` words in [`Rng::state`].
pub const RNG_STATE_WORDS: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    s: [u64; 4],
    // Cached second Box–Muller output, stored as raw bits.
    spare: Option<u64>,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { s, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, unbiased (Lemire's multiply-and-reject).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(bits) = self.spare.take() {
            return f64::from_bits(bits);
        }
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some((r * theta.sin()).to_bits());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Full generator state, for checkpointing.
    pub fn state(&self) -> [u64; RNG_STATE_WORDS] {
        let (has_spare, spare) = match self.spare {
            Some(bits) => (1, bits),
            None => (0, 0),
        };
        [self.s[0], self.s[1], self.s[2], self.s[3], has_spare, spare]
    }

    pub fn from_state(state: [u64; RNG_STATE_WORDS]) -> Self {
        Self {
            s: [state[0], state[1], state[2], state[3]],
            spare: (state[4] != 0).then_some(state[5]),
        }
    }
}
