//! Brownian paths on a master fine grid and the iterated integrals of the
//! Milstein correction.
//!
//! A [`BrownianStore`] holds the fine increments of one path over `[-τ, T]`.
//! Coarser levels read it by summation, so every step size in a study sees
//! the same path. Fine increment `j` covers `[-τ + jδ, -τ + (j+1)δ)`.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::normal::NormalStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("level step {level_dt} is not an integer multiple of the fine step {fine_dt}")]
    Misaligned { level_dt: f64, fine_dt: f64 },
    #[error("step {k} lies outside the stored window [-τ, T]")]
    OutOfRange { k: i64 },
    #[error("Q2 is only defined from the first full delay onward (k = {k} < M = {m_delay})")]
    BeforeDelay { k: i64, m_delay: usize },
    #[error("invalid store: {0}")]
    Invalid(String),
}

/// One Brownian path, `B(0) = 0`, stored as fine increments on `[-τ, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianStore {
    fine_dt: f64,
    /// Fine steps per delay.
    fine_delay: usize,
    increments: Vec<f64>,
    seed: u64,
    path: u64,
}

impl BrownianStore {
    /// Draws the increments for `(seed, path)`. The result does not depend on
    /// which thread generates it or in what order paths are generated.
    pub fn generate(
        seed: u64,
        path: u64,
        fine_dt: f64,
        delay: f64,
        horizon: f64,
    ) -> Result<Self, NoiseError> {
        let (fine_delay, fine_total) = fine_counts(fine_dt, delay, horizon)?;
        let n = fine_delay + fine_total;
        let scale = fine_dt.sqrt();
        let mut stream = NormalStream::new(seed, path);
        let increments = (0..n).map(|_| scale * stream.next_standard()).collect();
        Ok(BrownianStore {
            fine_dt,
            fine_delay,
            increments,
            seed,
            path,
        })
    }

    /// Wraps explicit increments (forced paths in tests and replay of dumps).
    pub fn from_increments(
        fine_dt: f64,
        delay: f64,
        horizon: f64,
        increments: Vec<f64>,
    ) -> Result<Self, NoiseError> {
        let (fine_delay, fine_total) = fine_counts(fine_dt, delay, horizon)?;
        if increments.len() != fine_delay + fine_total {
            return Err(NoiseError::Invalid(format!(
                "expected {} increments, got {}",
                fine_delay + fine_total,
                increments.len()
            )));
        }
        Ok(BrownianStore {
            fine_dt,
            fine_delay,
            increments,
            seed: 0,
            path: 0,
        })
    }

    pub fn fine_dt(&self) -> f64 {
        self.fine_dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> u64 {
        self.path
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `B(T)`: the sum of the fine increments on `[0, T]`, left to right.
    pub fn terminal_value(&self) -> f64 {
        self.increments[self.fine_delay..].iter().sum()
    }

    /// Fine steps per level step.
    pub fn ratio(&self, level_dt: f64) -> Result<usize, NoiseError> {
        let r = (level_dt / self.fine_dt).round();
        if r < 1.0 || r * self.fine_dt != level_dt {
            return Err(NoiseError::Misaligned {
                level_dt,
                fine_dt: self.fine_dt,
            });
        }
        Ok(r as usize)
    }

    /// Fine-increment window for level step `k` (time `t_k = k·level_dt`).
    fn window(&self, ratio: usize, k: i64) -> Result<&[f64], NoiseError> {
        let start = self.fine_delay as i64 + k * ratio as i64;
        if start < 0 || start as usize + ratio > self.increments.len() {
            return Err(NoiseError::OutOfRange { k });
        }
        let start = start as usize;
        Ok(&self.increments[start..start + ratio])
    }

    /// `B(t_{k+1}) - B(t_k)` at the given level.
    pub fn coarse_increment(&self, level_dt: f64, k: i64) -> Result<f64, NoiseError> {
        let r = self.ratio(level_dt)?;
        Ok(self.window(r, k)?.iter().sum())
    }

    /// `∫_{t_k}^{t_{k+1}} ∫_{t_k}^{s} dB(u - τ) dB(s)` as a left-point Itô sum
    /// over the fine sub-steps of `[t_k, t_{k+1}]`.
    pub fn q2(&self, level_dt: f64, k: i64, m_delay: usize) -> Result<f64, NoiseError> {
        if k < m_delay as i64 {
            return Err(NoiseError::BeforeDelay { k, m_delay });
        }
        let r = self.ratio(level_dt)?;
        let own = self.window(r, k)?;
        let delayed = self.window(r, k - m_delay as i64)?;
        Ok(delayed_iterated_sum(delayed, own))
    }

    /// Writes the `SDDEB1` debug dump.
    ///
    /// Layout, little-endian: magic `SDDEB1`, seed `u64`, path `u64`, fine step
    /// as numerator `u64` / denominator `u64`, increment count `u64`, then the
    /// raw `f64` increments.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        let (num, den) = dyadic_fraction(self.fine_dt).ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidInput,
                "fine step is not representable as u64/u64",
            )
        })?;
        w.write_all(DUMP_MAGIC)?;
        for v in [self.seed, self.path, num, den, self.increments.len() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump back. `delay` fixes the split between the pre-zero segment
    /// and `[0, T]`, which the format does not record.
    pub fn read_dump<R: Read>(mut r: R, delay: f64) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(bad("not an SDDEB1 dump"));
        }
        let mut word = || -> io::Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let (seed, path, num, den, count) = (word()?, word()?, word()?, word()?, word()?);
        if den == 0 {
            return Err(bad("zero denominator"));
        }
        let fine_dt = num as f64 / den as f64;
        let mut increments = Vec::with_capacity(count as usize);
        for _ in 0..count {
            increments.push(f64::from_bits(word()?));
        }
        let horizon = fine_dt * count as f64 - delay;
        let mut store = BrownianStore::from_increments(fine_dt, delay, horizon, increments)
            .map_err(|e| bad(&e.to_string()))?;
        store.seed = seed;
        store.path = path;
        Ok(store)
    }
}

const DUMP_MAGIC: &[u8; 6] = b"SDDEB1";

fn fine_counts(fine_dt: f64, delay: f64, horizon: f64) -> Result<(usize, usize), NoiseError> {
    let count = |len: f64| {
        let n = (len / fine_dt).round();
        if fine_dt > 0.0 && n >= 1.0 && n * fine_dt == len {
            Ok(n as usize)
        } else {
            Err(NoiseError::Invalid(format!(
                "{len} is not an integer multiple of the fine step {fine_dt}"
            )))
        }
    };
    Ok((count(delay)?, count(horizon)?))
}

/// Exact `num/den` with `den` a power of two, if `x` fits.
fn dyadic_fraction(x: f64) -> Option<(u64, u64)> {
    if !(x > 0.0 && x.is_finite()) {
        return None;
    }
    let mut num = x;
    let mut den: u64 = 1;
    while num.fract() != 0.0 {
        num *= 2.0;
        den = den.checked_mul(2)?;
    }
    if num > u64::MAX as f64 {
        return None;
    }
    Some((num as u64, den))
}

/// `Σ_j (Σ_{i<j} d_i)·b_j`: the left-point sum of `∫∫ dD dB` over matching sub-steps.
pub(crate) fn delayed_iterated_sum(delayed: &[f64], own: &[f64]) -> f64 {
    let mut partial = 0.0;
    let mut acc = 0.0;
    for (d, b) in delayed.iter().zip(own) {
        acc += partial * b;
        partial += d;
    }
    acc
}

/// `((ΔB)² - Δ) / 2`.
#[inline]
pub fn q1(delta_b: f64, dt: f64) -> f64 {
    0.5 * (delta_b * delta_b - dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> BrownianStore {
        BrownianStore::generate(42, 7, 2f64.powi(-8), 0.25, 1.0).unwrap()
    }

    #[test]
    fn increment_count_covers_delay_and_horizon() {
        let s = store();
        // coarsest level 2^-4: (M′ + M)·R = (16 + 4)·16
        assert_eq!(s.increments().len(), (16 + 4) * 16);
    }

    #[test]
    fn identity_coarsening() {
        let s = store();
        for k in -64..256 {
            assert_eq!(
                s.coarse_increment(s.fine_dt(), k).unwrap(),
                s.increments()[(k + 64) as usize]
            );
        }
    }

    #[test]
    fn telescoping_at_fine_level() {
        let s = store();
        let sum: f64 = (0..256).map(|k| s.coarse_increment(s.fine_dt(), k).unwrap()).sum();
        assert_eq!(sum, s.terminal_value());
    }

    #[test]
    fn two_level_consistency() {
        let s = store();
        let d = s.fine_dt();
        for k in 0..100 {
            let two = s.coarse_increment(2.0 * d, k).unwrap();
            let ones = s.coarse_increment(d, 2 * k).unwrap() + s.coarse_increment(d, 2 * k + 1).unwrap();
            assert_eq!(two, ones);
        }
    }

    #[test]
    fn alignment_and_range_errors() {
        let s = store();
        assert!(matches!(
            s.coarse_increment(3.0 * s.fine_dt() / 2.0, 0),
            Err(NoiseError::Misaligned { .. })
        ));
        assert!(matches!(s.coarse_increment(s.fine_dt(), 256), Err(NoiseError::OutOfRange { .. })));
        assert!(matches!(s.coarse_increment(s.fine_dt(), -65), Err(NoiseError::OutOfRange { .. })));
        assert!(matches!(s.q2(2f64.powi(-4), 3, 4), Err(NoiseError::BeforeDelay { .. })));
    }

    #[test]
    fn q1_formula() {
        assert_eq!(q1(0.0, 0.01), -0.005);
        assert_eq!(q1(0.5, 0.25), 0.0);
    }

    #[test]
    fn q2_vanishes_on_flat_delayed_window() {
        let (dt, r) = (2f64.powi(-4), 16);
        let fine = dt / r as f64;
        let n = ((0.25 + 1.0) / fine) as usize;
        let mut inc: Vec<f64> = (0..n).map(|j| ((j * 7919) % 13) as f64 * 1e-3 - 6e-3).collect();
        // level step k = 5, M = 4: delayed window is level step 1
        let delayed_start = (4 + 1) * r;
        for v in &mut inc[delayed_start..delayed_start + r] {
            *v = 0.0;
        }
        let s = BrownianStore::from_increments(fine, 0.25, 1.0, inc).unwrap();
        assert_eq!(s.q2(dt, 5, 4).unwrap(), 0.0);
        assert_ne!(s.q2(dt, 6, 4).unwrap(), 0.0);
    }

    #[test]
    fn q1_matches_fine_ito_sum_plus_correction() {
        // Q1 = Σ_j (B(s_j) - B(t_k)) δB_j + ½(Σ_j δB_j² - Δ), exactly up to rounding
        let s = store();
        let dt = 2f64.powi(-4);
        let r = s.ratio(dt).unwrap();
        for k in 0..16 {
            let w = s.window(r, k).unwrap();
            let db = s.coarse_increment(dt, k).unwrap();
            let ito = delayed_iterated_sum(w, w);
            let sq: f64 = w.iter().map(|v| v * v).sum();
            let rhs = ito + 0.5 * (sq - dt);
            assert!((q1(db, dt) - rhs).abs() <= 1e-12, "k={k}");
        }
    }

    #[test]
    fn dump_round_trip() {
        let s = store();
        let mut buf = Vec::new();
        s.write_dump(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"SDDEB1");
        assert_eq!(buf.len(), 6 + 5 * 8 + 8 * s.increments().len());
        let back = BrownianStore::read_dump(&buf[..], 0.25).unwrap();
        assert_eq!(back, s);
        assert!(BrownianStore::read_dump(&b"NOTDUMP"[..], 0.25).is_err());
    }

    #[test]
    fn dyadic_fractions() {
        assert_eq!(dyadic_fraction(2f64.powi(-11)), Some((1, 2048)));
        assert_eq!(dyadic_fraction(0.75), Some((3, 4)));
        assert_eq!(dyadic_fraction(3.0), Some((3, 1)));
    }
}
