use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Branch, Bus, Network, NetworkData};
use crate::error::{Error, Result};

/// Closed interval of scale factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRange {
    pub lo: f64,
    pub hi: f64,
}

impl ScaleRange {
    pub const IDENTITY: ScaleRange = ScaleRange { lo: 1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::Scenario(format!("invalid scale range [{}, {}]", lo, hi)));
        }
        Ok(ScaleRange { lo, hi })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Attaches `copies` copies of the feeder to one common slack bus.
///
/// Every copy draws one factor per branch (applied to both `r` and `x`) and
/// one per bus (applied to both loads) from `range`, using ChaCha8 seeded
/// with `seed`. Copy 0 keeps the original bus ids; copy `c` maps id `i` to
/// `c * (max_id + 1) + i`.
pub fn duplicate_system(net: &Network, copies: usize, seed: u64, range: ScaleRange) -> Result<Network> {
    if copies == 0 {
        return Err(Error::Scenario("copies must be at least 1".into()));
    }
    let src = net.data();
    let slack = src.slack;
    let stride = src.buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut buses = vec![net.slack_bus().clone()];
    let mut branches = Vec::with_capacity(copies * src.branches.len());
    for c in 0..copies {
        let map = |id: usize| if id == slack { slack } else { c * stride + id };
        for br in &src.branches {
            let s = range.draw(&mut rng);
            branches.push(Branch {
                from_bus: map(br.from_bus),
                to_bus: map(br.to_bus),
                r: br.r * s,
                x: br.x * s,
                i_max: br.i_max,
            });
        }
        for b in src.buses.iter().filter(|b| b.id != slack) {
            let s = range.draw(&mut rng);
            buses.push(Bus {
                id: map(b.id),
                p_load: b.p_load * s,
                q_load: b.q_load * s,
                ..b.clone()
            });
        }
    }
    Network::new(NetworkData { buses, branches, ..src.clone() })
}
