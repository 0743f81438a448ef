//! Portable seeded generator used for dataset splits, batch order, dropout
//! masks and parameter initialization.
//!
//! The algorithm is fixed so that any implementation can reproduce a split
//! from its seed:
//!
//! * state = `splitmix64(seed)`, replaced by `0x9E3779B97F4A7C15` if zero;
//! * each draw is xorshift64* : `x ^= x >> 12; x ^= x << 25; x ^= x >> 27;`
//!   output `x * 0x2545F4914F6CDD1D` (wrapping);
//! * `next_f64` takes the top 53 bits: `(u >> 11) * 2^-53`, in `[0, 1)`;
//! * `below(n)` is `next_u64() % n`;
//! * `shuffle` is Fisher–Yates from the last index down: for `i` in
//!   `(1..len).rev()`, swap `i` with `below(i + 1)`.

#[derive(Clone, Debug)]
pub struct XorShiftRng {
    state: u64,
}

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl XorShiftRng {
    pub fn new(seed: u64) -> Self {
        let state = match splitmix64(seed) {
            0 => 0x9E37_79B9_7F4A_7C15,
            s => s,
        };
        XorShiftRng { state }
    }

    /// Independent stream derived from `seed` and a purpose tag.
    pub fn derived(seed: u64, stream: u64) -> Self {
        XorShiftRng::new(splitmix64(seed ^ splitmix64(stream)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-bound, bound)`.
    pub fn symmetric(&mut self, bound: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * bound
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
