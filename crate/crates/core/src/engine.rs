//! Instrumented model of packed-ciphertext arithmetic over real slots.
//!
//! A [`SlotRegister`] is a fixed-length cyclic vector of real values tagged as
//! plaintext or ciphertext. The [`EngineContext`] executes the packed
//! operations (slotwise add, slotwise multiply, cyclic rotation) while
//! tracking multiplicative levels and operation counts, and can inject
//! per-slot Gaussian noise after ciphertext multiplications to mimic
//! approximate arithmetic.
//!
//! There is no cryptography here: "encryption" only tags a register and arms
//! its level counter, so slot values stay readable by the simulation. Two
//! deliberate divergences from a real leveled backend:
//!
//! - register lengths are per-register and cyclic wrap happens modulo the
//!   register's own length, instead of one global power-of-two slot count;
//! - [`SlotRegister::resized`] re-encodes a register at a new length for
//!   free, standing in for the client-side boundary between two logical
//!   widths inside one physical register.
//!
//! Counting rules: a rotation is counted only when it actually moves a
//! ciphertext (rotation by zero and any plaintext rotation are free
//! preprocessing), operations on two plaintext registers are free, and every
//! multiplication that involves a ciphertext consumes one level whether the
//! other operand is plain or encrypted.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::rngs::SmallRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Whether a register is plaintext or ciphertext.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegisterKind {
    Plain,
    Cipher,
}

/// A fixed-length cyclic register of real slots.
///
/// The length is set at creation and never changes across arithmetic; `level`
/// is the remaining multiplicative budget and is meaningful only for
/// ciphertext registers.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotRegister {
    slots: Vec<f64>,
    kind: RegisterKind,
    level: u32,
}

impl SlotRegister {
    /// Encode `values` into a plaintext register of length `len`,
    /// zero-padding the remaining slots.
    pub fn encode(values: &[f64], len: usize) -> Result<Self> {
        if values.len() > len {
            return Err(Error::Dimension {
                expected: len,
                got: values.len(),
            });
        }
        let mut slots = values.to_vec();
        slots.resize(len, 0.0);
        Ok(Self {
            slots,
            kind: RegisterKind::Plain,
            level: 0,
        })
    }

    /// All-zero plaintext register.
    pub fn zeros(len: usize) -> Self {
        Self {
            slots: vec![0.0; len],
            kind: RegisterKind::Plain,
            level: 0,
        }
    }

    /// Plaintext register with every slot set to `value`.
    pub fn constant(value: f64, len: usize) -> Self {
        Self {
            slots: vec![value; len],
            kind: RegisterKind::Plain,
            level: 0,
        }
    }

    /// Plaintext unit vector: 1.0 at `index`, 0.0 elsewhere.
    pub fn unit(index: usize, len: usize) -> Self {
        let mut slots = vec![0.0; len];
        slots[index] = 1.0;
        Self {
            slots,
            kind: RegisterKind::Plain,
            level: 0,
        }
    }

    fn cipher(slots: Vec<f64>, level: u32) -> Self {
        Self {
            slots,
            kind: RegisterKind::Cipher,
            level,
        }
    }

    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn kind(&self) -> RegisterKind {
        self.kind
    }

    pub fn is_cipher(&self) -> bool {
        self.kind == RegisterKind::Cipher
    }

    /// Remaining multiplicative levels. Meaningful only for ciphertexts;
    /// plaintext registers report 0 and never constrain an operation.
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Re-encode this register at a new length, keeping slots `0..len` and
    /// zero-filling any extension.
    ///
    /// This is the free boundary operation between two logical widths; it is
    /// only sound when the dropped slots carry no information. Callers are
    /// expected to use it where the truncated slots are zero by construction.
    pub fn resized(&self, len: usize) -> Self {
        let mut slots = self.slots.clone();
        slots.resize(len, 0.0);
        Self {
            slots,
            kind: self.kind,
            level: self.level,
        }
    }

    fn effective_level(&self) -> Option<u32> {
        match self.kind {
            RegisterKind::Plain => None,
            RegisterKind::Cipher => Some(self.level),
        }
    }
}

/// Monotone operation counters, shared between forked contexts.
#[derive(Debug, Default)]
struct OpCounters {
    ct_mults: AtomicU64,
    pt_mults: AtomicU64,
    rotations: AtomicU64,
    additions: AtomicU64,
    min_level: AtomicU32,
}

/// A point-in-time copy of the counters. Differences of two snapshots give
/// the cost of the work between them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub ct_mults: u64,
    pub pt_mults: u64,
    pub rotations: u64,
    pub additions: u64,
}

impl CounterSnapshot {
    /// Ciphertext-ciphertext plus plaintext-ciphertext multiplications. Both
    /// consume a level, so reports treat them as one figure.
    pub fn mults(&self) -> u64 {
        self.ct_mults + self.pt_mults
    }

    /// Multiplications plus rotations, the two heavyweight operations.
    pub fn heavy_ops(&self) -> u64 {
        self.mults() + self.rotations
    }

    /// Counter increments since `earlier`.
    pub fn since(&self, earlier: CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            ct_mults: self.ct_mults - earlier.ct_mults,
            pt_mults: self.pt_mults - earlier.pt_mults,
            rotations: self.rotations - earlier.rotations,
            additions: self.additions - earlier.additions,
        }
    }
}

/// Execution context for slot arithmetic: level budget, noise configuration
/// and shared operation counters.
///
/// Contexts are cheap to fork. A fork shares the parent's counters (totals
/// stay exact regardless of scheduling) but owns a derived noise stream, so
/// per-sample work can run on worker threads and still reproduce bit-for-bit
/// for a fixed seed, independent of the worker count.
#[derive(Debug)]
pub struct EngineContext {
    level_budget: u32,
    noise_std: f64,
    stream_seed: u64,
    counters: Arc<OpCounters>,
    noise_rng: Option<Mutex<SmallRng>>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child stream seed from a base seed and a salt.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl EngineContext {
    pub fn new(level_budget: u32, noise_std: f64, seed: u64) -> Self {
        let counters = OpCounters {
            min_level: AtomicU32::new(level_budget),
            ..OpCounters::default()
        };
        let noise_rng = if noise_std > 0.0 {
            Some(Mutex::new(SmallRng::seed_from_u64(seed)))
        } else {
            None
        };
        Self {
            level_budget,
            noise_std,
            stream_seed: seed,
            counters: Arc::new(counters),
            noise_rng,
        }
    }

    /// Exact-arithmetic context: no noise injection.
    pub fn exact(level_budget: u32) -> Self {
        Self::new(level_budget, 0.0, 0)
    }

    /// Child context sharing this context's counters, with a noise stream
    /// derived from `salt`. Used to give each concurrently processed sample
    /// its own deterministic randomness.
    pub fn fork(&self, salt: u64) -> Self {
        let seed = derive_seed(self.stream_seed, salt);
        let noise_rng = if self.noise_std > 0.0 {
            Some(Mutex::new(SmallRng::seed_from_u64(seed)))
        } else {
            None
        };
        Self {
            level_budget: self.level_budget,
            noise_std: self.noise_std,
            stream_seed: seed,
            counters: Arc::clone(&self.counters),
            noise_rng,
        }
    }

    pub fn level_budget(&self) -> u32 {
        self.level_budget
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            ct_mults: self.counters.ct_mults.load(Ordering::Relaxed),
            pt_mults: self.counters.pt_mults.load(Ordering::Relaxed),
            rotations: self.counters.rotations.load(Ordering::Relaxed),
            additions: self.counters.additions.load(Ordering::Relaxed),
        }
    }

    /// Lowest level any ciphertext produced by this context (or its forks)
    /// has reached.
    pub fn min_level_seen(&self) -> u32 {
        self.counters.min_level.load(Ordering::Relaxed)
    }

    fn note_level(&self, level: u32) {
        self.counters.min_level.fetch_min(level, Ordering::Relaxed);
    }

    /// Tag a plaintext register as a fresh ciphertext at the full budget.
    pub fn encrypt(&self, p: &SlotRegister) -> Result<SlotRegister> {
        if p.is_cipher() {
            return Err(Error::Kind { expected: "plain" });
        }
        self.note_level(self.level_budget);
        Ok(SlotRegister::cipher(p.slots.clone(), self.level_budget))
    }

    /// Recover the plaintext register behind a ciphertext.
    pub fn decrypt(&self, c: &SlotRegister) -> Result<SlotRegister> {
        if !c.is_cipher() {
            return Err(Error::Kind { expected: "cipher" });
        }
        Ok(SlotRegister {
            slots: c.slots.clone(),
            kind: RegisterKind::Plain,
            level: 0,
        })
    }

    /// Cyclic rotation: positive `k` shifts right, negative left, so
    /// `result[(j + k) mod L] = a[j]`.
    ///
    /// Counted only when it moves a ciphertext; rotating a plaintext is free
    /// preprocessing and rotation by a multiple of the length is the
    /// identity.
    pub fn rotate(&self, a: &SlotRegister, k: i64) -> SlotRegister {
        let len = a.slots.len() as i64;
        let k = k.rem_euclid(len);
        if k == 0 {
            return a.clone();
        }
        if a.is_cipher() {
            self.counters.rotations.fetch_add(1, Ordering::Relaxed);
        }
        let mut slots = vec![0.0; a.slots.len()];
        for (j, v) in a.slots.iter().enumerate() {
            slots[(j + k as usize) % a.slots.len()] = *v;
        }
        SlotRegister {
            slots,
            kind: a.kind,
            level: a.level,
        }
    }

    /// Slotwise sum. The result is a ciphertext if either operand is one, at
    /// the minimum of the ciphertext operand levels.
    pub fn add(&self, a: &SlotRegister, b: &SlotRegister) -> Result<SlotRegister> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                got: b.len(),
            });
        }
        let slots: Vec<f64> = a.slots.iter().zip(&b.slots).map(|(x, y)| x + y).collect();
        match min_cipher_level(a, b) {
            None => Ok(SlotRegister {
                slots,
                kind: RegisterKind::Plain,
                level: 0,
            }),
            Some(level) => {
                self.counters.additions.fetch_add(1, Ordering::Relaxed);
                self.note_level(level);
                Ok(SlotRegister::cipher(slots, level))
            }
        }
    }

    /// Slotwise product. Consumes one level whenever a ciphertext is
    /// involved; errors if the ciphertext operands have no level left.
    pub fn mul(&self, a: &SlotRegister, b: &SlotRegister) -> Result<SlotRegister> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                got: b.len(),
            });
        }
        let mut slots: Vec<f64> = a.slots.iter().zip(&b.slots).map(|(x, y)| x * y).collect();
        let Some(level_in) = min_cipher_level(a, b) else {
            // plain * plain is free client-side preprocessing
            return Ok(SlotRegister {
                slots,
                kind: RegisterKind::Plain,
                level: 0,
            });
        };
        if level_in == 0 {
            return Err(Error::DepthBudget {
                needed: 1,
                available: 0,
            });
        }
        let level = level_in - 1;
        if let Some(rng) = &self.noise_rng {
            let normal = Normal::new(0.0, self.noise_std).expect("noise_std must be finite");
            let mut rng = rng.lock().expect("noise rng poisoned");
            for v in &mut slots {
                *v += normal.sample(&mut *rng);
            }
        }
        if a.is_cipher() && b.is_cipher() {
            self.counters.ct_mults.fetch_add(1, Ordering::Relaxed);
        } else {
            self.counters.pt_mults.fetch_add(1, Ordering::Relaxed);
        }
        self.note_level(level);
        Ok(SlotRegister::cipher(slots, level))
    }
}

fn min_cipher_level(a: &SlotRegister, b: &SlotRegister) -> Option<u32> {
    match (a.effective_level(), b.effective_level()) {
        (None, None) => None,
        (Some(l), None) | (None, Some(l)) => Some(l),
        (Some(l), Some(r)) => Some(l.min(r)),
    }
}
