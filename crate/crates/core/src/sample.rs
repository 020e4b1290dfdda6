//! Seeded random jet sampling shared by compile-time probes and the check
//! suite. Everything is ChaCha8-based so identical seeds give identical
//! bindings on every platform.

use crate::expr::{Binding, Expression, Symbol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Axis-aligned sampling box, one interval for every jet slot.
#[derive(Debug, Clone, Copy)]
pub struct SampleBox {
    pub lo: f64,
    pub hi: f64,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox { lo: -2.0, hi: 2.0 }
    }
}

pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    // Fold the label into the seed so independent checks get independent
    // streams from one user-facing seed.
    let mut folded = seed ^ 0x9e37_79b9_7f4a_7c15;
    for byte in label.bytes() {
        folded = folded.wrapping_mul(0x100_0000_01b3) ^ u64::from(byte);
    }
    ChaCha8Rng::seed_from_u64(folded)
}

/// One random binding with time, coordinate jets through `max_order`, and
/// multiplier slots through order 1.
pub fn random_jet(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    max_order: u8,
    sbox: SampleBox,
) -> Binding {
    let mut b = Binding::new();
    b.set(Symbol::Time, rng.gen_range(sbox.lo..sbox.hi));
    for i in 0..n {
        for order in 0..=max_order {
            b.set(Symbol::coord(i, order), rng.gen_range(sbox.lo..sbox.hi));
        }
    }
    for a in 0..m {
        b.set(Symbol::multiplier(a, 0), rng.gen_range(sbox.lo..sbox.hi));
        b.set(Symbol::multiplier(a, 1), rng.gen_range(sbox.lo..sbox.hi));
    }
    b
}

/// Per-slot sampling intervals: one for time, one per coordinate jet slot,
/// one per multiplier rate. Defaults to the uniform box; individual slots
/// can be overridden, which the relativistic scenarios use to keep sampled
/// four-velocities timelike.
#[derive(Debug, Clone)]
pub struct JetBox {
    pub time: (f64, f64),
    /// Indexed `[coordinate][order]`, orders 0 through 4.
    pub coords: Vec<[(f64, f64); 5]>,
    /// One interval per multiplier rate.
    pub multipliers: Vec<(f64, f64)>,
}

impl JetBox {
    pub fn uniform(n: usize, m: usize, lo: f64, hi: f64) -> Self {
        JetBox {
            time: (lo, hi),
            coords: vec![[(lo, hi); 5]; n],
            multipliers: vec![(lo, hi); m],
        }
    }

    pub fn with_time(mut self, lo: f64, hi: f64) -> Self {
        self.time = (lo, hi);
        self
    }

    pub fn with_slot(mut self, coord: usize, order: u8, lo: f64, hi: f64) -> Self {
        self.coords[coord][order as usize] = (lo, hi);
        self
    }

    /// Overrides the interval of one jet order across every coordinate.
    pub fn with_order(mut self, order: u8, lo: f64, hi: f64) -> Self {
        for slots in &mut self.coords {
            slots[order as usize] = (lo, hi);
        }
        self
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    /// One random binding with jets through `max_order`.
    pub fn sample(&self, rng: &mut ChaCha8Rng, max_order: u8) -> Binding {
        let mut b = Binding::new();
        b.set(Symbol::Time, draw(rng, self.time));
        for (i, slots) in self.coords.iter().enumerate() {
            for order in 0..=max_order {
                b.set(Symbol::coord(i, order), draw(rng, slots[order as usize]));
            }
        }
        for (a, interval) in self.multipliers.iter().enumerate() {
            b.set(Symbol::multiplier(a, 0), draw(rng, *interval));
            b.set(Symbol::multiplier(a, 1), draw(rng, *interval));
        }
        b
    }

    /// Like [`finite_jets`], but over this box.
    pub fn sample_finite(
        &self,
        rng: &mut ChaCha8Rng,
        max_order: u8,
        must_be_finite: &[Expression],
        count: usize,
    ) -> Vec<Binding> {
        let mut out = Vec::with_capacity(count);
        let budget = count * 50;
        for _ in 0..budget {
            if out.len() == count {
                break;
            }
            let b = self.sample(rng, max_order);
            let ok = must_be_finite.iter().all(|e| match e.eval(&b) {
                Ok(v) => v.is_finite(),
                Err(_) => false,
            });
            if ok {
                out.push(b);
            }
        }
        out
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws bindings until `count` of them evaluate every expression in
/// `must_be_finite` to a finite value. Returns fewer only if the rejection
/// budget (50 draws per requested binding) runs out, which callers treat as
/// a domain too small to probe.
pub fn finite_jets(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    max_order: u8,
    sbox: SampleBox,
    must_be_finite: &[Expression],
    count: usize,
) -> Vec<Binding> {
    let mut out = Vec::with_capacity(count);
    let budget = count * 50;
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let b = random_jet(rng, n, m, max_order, sbox);
        let ok = must_be_finite.iter().all(|e| match e.eval(&b) {
            Ok(v) => v.is_finite(),
            Err(_) => false,
        });
        if ok {
            out.push(b);
        }
    }
    out
}
