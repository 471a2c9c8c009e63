/// Counter-based dropout mask generator.
///
/// Every call to [`DropoutRng::mask`] is one op instance; the mask value for
/// element `i` is a pure function of `(seed, instance, i)`, so replaying the same
/// forward pass reproduces the same masks without carrying generator state
/// between documents.
#[derive(Debug, Clone)]
pub struct DropoutRng {
    seed: u64,
    instance: u64,
}

impl DropoutRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, instance: 0 }
    }

    /// Derives an independent stream, e.g. one per (epoch, document).
    pub fn derive(seed: u64, a: u64, b: u64) -> Self {
        Self::new(mix(mix(seed ^ 0x9e37_79b9_7f4a_7c15) ^ mix(a.wrapping_add(1))) ^ mix(b.wrapping_add(0x51)))
    }

    /// Inverted-dropout scale mask: `0` with probability `p`, else `1/(1-p)`.
    pub fn mask(&mut self, len: usize, p: f64) -> Vec<f64> {
        let inst = self.instance;
        self.instance += 1;
        let keep = 1.0 / (1.0 - p);
        (0..len as u64)
            .map(|i| {
                let u = to_unit(mix(self.seed ^ mix(inst.wrapping_mul(0xd6e8_feb8_6659_fd93) ^ i)));
                if u < p {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }

    pub fn instances_used(&self) -> u64 {
        self.instance
    }
}

/// splitmix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
