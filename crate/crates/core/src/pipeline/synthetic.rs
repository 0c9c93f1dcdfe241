//! Seeded molecule generator and a descriptor-based stand-in for docking
//! scores.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::numeric::SeededRng;
use crate::smiles::{parse_smiles, to_smiles, Dataset, MolecularGraph, Record};

const AROMATIC_RINGS: &[&str] = &[
    "c1ccccc1",
    "c1ccccc1",
    "c1ccc(F)cc1",
    "c1ccc(Cl)cc1",
    "c1ccc(O)cc1",
    "c1ccncc1",
    "c1cncnc1",
    "c1ccsc1",
    "c1ccoc1",
    "c1cc[nH]c1",
    "c1ccc2ccccc2c1",
];

const ALIPHATIC_RINGS: &[&str] = &[
    "C1CCCCC1",
    "C1CCNCC1",
    "C1CCOCC1",
    "C1CCCC1",
    "C1CCN(C)CC1",
    "C1CC1",
    "C1CCC(=O)CC1",
];

const BRANCHES: &[&str] = &["(C)", "(O)", "(=O)", "(F)", "(Cl)", "(N)", "(C)(C)", "(OC)"];

/// Writes one molecule as SMILES from a small fragment grammar: chains with
/// branches, five- and six-membered rings, heteroatom substitutions.
pub fn random_smiles(rng: &mut ChaCha8Rng) -> String {
    let units = rng.random_range(1..=4);
    let mut out = String::new();
    let mut prev_aromatic = false;
    for _ in 0..units {
        let pick: f64 = rng.random();
        if pick < 0.4 {
            let len = rng.random_range(1..=4);
            let mut last_o = false;
            for a in 0..len {
                let r: f64 = rng.random();
                let atom = if r < 0.7 || last_o {
                    "C"
                } else if r < 0.82 {
                    "N"
                } else if r < 0.94 {
                    "O"
                } else {
                    "S"
                };
                out.push_str(atom);
                last_o = atom == "O";
                if atom == "C" && a + 1 < len && rng.random_bool(0.25) {
                    out.push_str(BRANCHES[rng.random_range(0..BRANCHES.len())]);
                }
            }
            prev_aromatic = false;
        } else if pick < 0.75 {
            if prev_aromatic {
                out.push('-');
            }
            out.push_str(AROMATIC_RINGS[rng.random_range(0..AROMATIC_RINGS.len())]);
            prev_aromatic = true;
        } else {
            out.push_str(ALIPHATIC_RINGS[rng.random_range(0..ALIPHATIC_RINGS.len())]);
            prev_aromatic = false;
        }
    }
    out
}

/// Graph descriptors the oracle scores on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Descriptors {
    pub rings: f64,
    pub heteroatoms: f64,
    pub aromatic_atoms: f64,
    pub heavy_atoms: f64,
    pub mean_degree: f64,
}

impl Descriptors {
    pub fn of(g: &MolecularGraph) -> Self {
        let n = g.num_atoms();
        let degree_sum: usize = (0..n).map(|i| g.degree(i)).sum();
        Self {
            rings: g.ring_count() as f64,
            heteroatoms: g.atoms.iter().filter(|a| a.symbol != "C").count() as f64,
            aromatic_atoms: g.atoms.iter().filter(|a| a.aromatic).count() as f64,
            heavy_atoms: n as f64,
            mean_degree: if n == 0 { 0.0 } else { degree_sum as f64 / n as f64 },
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.rings,
            self.heteroatoms,
            self.aromatic_atoms,
            self.heavy_atoms,
            self.mean_degree,
        ]
    }
}

/// Deterministic docking-like score: a saturating linear function of the
/// descriptors plus seeded Gaussian noise keyed on the molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOracle {
    pub seed: u64,
    /// Weights for rings, heteroatoms, aromatic atoms, heavy atoms, mean degree.
    pub weights: [f64; 5],
    pub noise: f64,
}

impl SyntheticOracle {
    pub const SCALE: f64 = 14.0;

    pub fn new(seed: u64, noise: f64) -> Self {
        Self {
            seed,
            weights: [1.1, 0.35, 0.2, 0.12, 1.2],
            noise,
        }
    }

    /// Noise-free part of the score, in `(-14, 0]`.
    pub fn signal(&self, g: &MolecularGraph) -> f64 {
        let d = Descriptors::of(g).as_array();
        let raw: f64 = self.weights.iter().zip(d).map(|(w, x)| w * x).sum();
        -Self::SCALE * (raw / Self::SCALE).tanh()
    }

    pub fn score(&self, g: &MolecularGraph) -> f64 {
        let signal = self.signal(g);
        if self.noise == 0.0 {
            return signal;
        }
        let digest = Sha256::digest(to_smiles(g).as_bytes());
        let key = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = SeededRng::new(self.seed).fork(key).generator();
        let eps = Normal::new(0.0, self.noise).expect("finite noise").sample(&mut rng);
        (signal + eps).clamp(-Self::SCALE, 0.0)
    }
}

/// Generates `n` scored molecules; every SMILES is re-parsed as a self-check.
pub fn make_data(n: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Config(format!("make-data needs n >= 10, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise {noise} must be finite and non-negative")));
    }
    let oracle = SyntheticOracle::new(seed, noise);
    let mut rng = SeededRng::new(seed).generator();
    let width = (n - 1).to_string().len();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let smiles = random_smiles(&mut rng);
        let g = parse_smiles(&smiles)
            .map_err(|e| Error::Data(format!("generated SMILES `{smiles}` failed to parse: {e}")))?;
        records.push(Record {
            id: format!("mol{i:0width$}"),
            smiles,
            score: oracle.score(&g),
        });
    }
    Ok(Dataset {
        records,
        provenance: format!("synthetic(n={n}, seed={seed}, noise={noise})"),
    })
}

/// Writes an `id,smiles,score` CSV.
pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["id", "smiles", "score"])?;
        for r in &d.records {
            wtr.write_record([r.id.as_str(), r.smiles.as_str(), &r.score.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    })
}
