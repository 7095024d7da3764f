//! Per-component random streams derived from one master seed.
//!
//! Each component gets its own ChaCha key and indexes independent streams
//! by a counter (epoch, step), so turning one source of randomness on or off
//! never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Init,
    DataOrder,
    Gumbel,
    Surgery,
}

impl Component {
    fn id(self) -> u64 {
        match self {
            Self::Init => 1,
            Self::DataOrder => 2,
            Self::Gumbel => 3,
            Self::Surgery => 4,
        }
    }
}

/// Seed of `component`'s key, mixed so nearby master seeds stay unrelated.
pub fn component_seed(master: u64, component: Component) -> u64 {
    let mut z = master ^ component.id().wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream `index` of `component`.
pub fn component_rng(master: u64, component: Component, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(component_seed(master, component));
    rng.set_stream(index);
    rng
}
