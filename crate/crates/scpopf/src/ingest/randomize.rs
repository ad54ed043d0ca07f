//! Seeded load randomization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scpopf_core::netmodel::Network;
use scpopf_core::Complex64;

use super::schema::FeederFile;
use super::IngestError;

/// Uniform ranges for active power (kW) and power factor, plus the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizationSpec {
    pub p_kw: (f64, f64),
    pub pf: (f64, f64),
    pub seed: u64,
}

impl RandomizationSpec {
    /// Residential loads of 0.2–0.8 kW at power factor 0.92–0.98.
    pub fn residential(seed: u64) -> Self {
        Self {
            p_kw: (0.2, 0.8),
            pf: (0.92, 0.98),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let (p_lo, p_hi) = self.p_kw;
        let (pf_lo, pf_hi) = self.pf;
        if !(0.0 < p_lo && p_lo <= p_hi && p_hi.is_finite()) {
            return Err(IngestError::Randomization(format!(
                "need 0 < p_lo <= p_hi, got [{p_lo}, {p_hi}]"
            )));
        }
        if !(0.0 < pf_lo && pf_lo <= pf_hi && pf_hi <= 1.0) {
            return Err(IngestError::Randomization(format!(
                "need 0 < pf_lo <= pf_hi <= 1, got [{pf_lo}, {pf_hi}]"
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Draws one `(P, Q)` pair in kW / kVAr.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let p = rng.random_range(self.p_kw.0..=self.p_kw.1);
        let pf: f64 = rng.random_range(self.pf.0..=self.pf.1);
        (p, p * pf.acos().tan())
    }
}

/// Redraws every load of `file` in place, one draw per load record.
pub fn randomize_feeder(file: &mut FeederFile, spec: &RandomizationSpec) -> Result<(), IngestError> {
    spec.validate()?;
    let mut rng = spec.rng();
    for load in &mut file.loads {
        let (p, q) = spec.draw(&mut rng);
        load.p_kw = p;
        load.q_kvar = q;
    }
    Ok(())
}

/// Same as [`randomize_feeder`] on a per-unit network with power base
/// `s_base_kva`.
pub fn randomize_loads(
    network: &Network,
    spec: &RandomizationSpec,
    s_base_kva: f64,
) -> Result<Network, IngestError> {
    spec.validate()?;
    if !(s_base_kva > 0.0 && s_base_kva.is_finite()) {
        return Err(IngestError::invalid("base.s_kva", "must be positive"));
    }
    let mut rng = spec.rng();
    let mut builder = Network::builder().reference(network.reference());
    for bus in network.buses() {
        builder = builder.bus(&bus.id, bus.phases, bus.vmin, bus.vmax);
    }
    for br in network.branches() {
        builder = builder.branch(&br.from, &br.to, br.y);
    }
    for load in network.loads() {
        let (p, q) = spec.draw(&mut rng);
        builder = builder.load(&load.bus, load.phase, Complex64::new(p, q) / s_base_kva);
    }
    for g in network.generators() {
        builder = builder.generator(g.clone());
    }
    let slack = network.slack();
    Ok(builder.slack(&slack.bus, slack.voltage).build()?)
}
