//! Synthetic blind-source-separation data: uniform sources, a Gaussian
//! mixing matrix, optional additive noise, and the binary dataset codec.
//!
//! Dataset file layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "UBSSDAT1"
//! m, l, T      u32 each
//! count        u32      number of sequences
//! noise_sigma  f64
//! master_seed  u64
//! A            l*m f64, row-major
//! per sequence S (m*T f64) then X (l*T f64), column-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"UBSSDAT1";

const DOMAIN_MIXING: u64 = 1;
const DOMAIN_SOURCES: u64 = 2;
const DOMAIN_NOISE: u64 = 3;

/// Derives an independent child seed from `master` for the given domain and index.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(domain.wrapping_mul(1 << 40).wrapping_add(index));
    rng.random()
}

/// `m x T` source samples; column `t` is `s(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSequence {
    samples: DMatrix<f64>,
}

impl SourceSequence {
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::invalid("source sequence must be non-empty"));
        }
        Ok(Self { samples })
    }

    pub fn sources(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }
}

/// `l x m` mixing matrix with `l >= m` and full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    matrix: DMatrix<f64>,
}

impl MixingMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (l, m) = matrix.shape();
        if m == 0 || l < m {
            return Err(Error::invalid(format!(
                "mixing matrix must be l x m with l >= m >= 1, got {l} x {m}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn sensors(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn sources(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// One observed sequence together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDataset {
    pub sources: SourceSequence,
    pub mixing: MixingMatrix,
    pub noise_sigma: f64,
    /// `l x T`; column `t` is `x(t) = A s(t) + n(t)`.
    pub observations: DMatrix<f64>,
}

impl MixtureDataset {
    pub fn len(&self) -> usize {
        self.observations.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.ncols() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub sources: usize,
    pub sensors: usize,
    pub len: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub noise_sigma: f64,
    pub master_seed: u64,
    /// Shift sources to zero mean (`U(-0.5, 0.5)`).
    pub center: bool,
}

impl GeneratorConfig {
    /// `m` sources, `l = m + 2` sensors, noiseless, 10^3 train / 10^2 test sequences.
    pub fn new(sources: usize, len: usize, master_seed: u64) -> Self {
        Self {
            sources,
            sensors: sources + 2,
            len,
            num_train: 1000,
            num_test: 100,
            noise_sigma: 0.0,
            master_seed,
            center: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 || self.len == 0 {
            return Err(Error::invalid("source count and sequence length must be positive"));
        }
        if self.sensors < self.sources {
            return Err(Error::invalid(format!(
                "sensor count {} is below source count {}",
                self.sensors, self.sources
            )));
        }
        if self.num_train + self.num_test == 0 {
            return Err(Error::invalid("at least one sequence must be requested"));
        }
        check_sigma(self.noise_sigma)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// `m x T` i.i.d. `U(0,1)` samples.
pub fn generate_sources(m: usize, len: usize, seed: u64) -> Result<SourceSequence> {
    generate_sources_with(m, len, seed, |rng| rng.random::<f64>())
}

/// Like [`generate_sources`] with a caller-supplied per-sample distribution.
pub fn generate_sources_with<F>(m: usize, len: usize, seed: u64, mut sampler: F) -> Result<SourceSequence>
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    if m == 0 || len == 0 {
        return Err(Error::invalid(format!(
            "source dimensions must be positive, got m={m}, T={len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // from_fn fills column by column, so each s(t) is drawn contiguously.
    let samples = DMatrix::from_fn(m, len, |_, _| sampler(&mut rng));
    SourceSequence::new(samples)
}

/// `l x m` matrix with i.i.d. standard normal entries, redrawn until full column rank.
pub fn generate_mixing(l: usize, m: usize, seed: u64) -> Result<MixingMatrix> {
    if m == 0 || l < m {
        return Err(Error::invalid(format!("need l >= m >= 1, got l={l}, m={m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = DMatrix::from_fn(l, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sv = a.singular_values();
        let max = sv.max();
        if max > 0.0 && sv.min() > max * 1e-10 {
            return MixingMatrix::new(a);
        }
    }
}

/// `X = A S + sigma Z` with `Z` standard normal.
pub fn mix(sources: &SourceSequence, mixing: &MixingMatrix, noise_sigma: f64, seed: u64) -> Result<MixtureDataset> {
    if mixing.sources() != sources.sources() {
        return Err(Error::invalid(format!(
            "mixing matrix expects {} sources, sequence has {}",
            mixing.sources(),
            sources.sources()
        )));
    }
    check_sigma(noise_sigma)?;
    let mut observations = mixing.matrix() * sources.samples();
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in observations.iter_mut() {
            *v += noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(MixtureDataset {
        sources: sources.clone(),
        mixing: mixing.clone(),
        noise_sigma,
        observations,
    })
}

/// A set of sequences sharing one mixing matrix, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCollection {
    pub mixing: MixingMatrix,
    pub noise_sigma: f64,
    pub master_seed: u64,
    pub sequences: Vec<MixtureDataset>,
}

impl DatasetCollection {
    pub fn sources(&self) -> usize {
        self.mixing.sources()
    }

    pub fn sensors(&self) -> usize {
        self.mixing.sensors()
    }

    /// Common sequence length (0 if there are no sequences).
    pub fn len(&self) -> usize {
        self.sequences.first().map_or(0, MixtureDataset::len)
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Splits into `(train, test)` where the last `test_count` sequences are the test set.
    pub fn split(&self, test_count: usize) -> Result<(&[MixtureDataset], &[MixtureDataset])> {
        if test_count > self.sequences.len() {
            return Err(Error::invalid(format!(
                "requested {test_count} test sequences but only {} are stored",
                self.sequences.len()
            )));
        }
        Ok(self.sequences.split_at(self.sequences.len() - test_count))
    }
}

impl From<MixtureDataset> for DatasetCollection {
    fn from(d: MixtureDataset) -> Self {
        Self {
            mixing: d.mixing.clone(),
            noise_sigma: d.noise_sigma,
            master_seed: 0,
            sequences: vec![d],
        }
    }
}

/// Generates `num_train + num_test` sequences (train first) under one mixing matrix.
pub fn generate(config: &GeneratorConfig) -> Result<DatasetCollection> {
    config.validate()?;
    let master = config.master_seed;
    let mixing = generate_mixing(config.sensors, config.sources, derive_seed(master, DOMAIN_MIXING, 0))?;
    let count = config.num_train + config.num_test;
    let center = config.center;
    let sequences = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let src_seed = derive_seed(master, DOMAIN_SOURCES, i);
            let sources = if center {
                generate_sources_with(config.sources, config.len, src_seed, |rng| rng.random::<f64>() - 0.5)?
            } else {
                generate_sources(config.sources, config.len, src_seed)?
            };
            mix(
                &sources,
                &mixing,
                config.noise_sigma,
                derive_seed(master, DOMAIN_NOISE, i),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetCollection {
        mixing,
        noise_sigma: config.noise_sigma,
        master_seed: master,
        sequences,
    })
}

pub fn encode_dataset(collection: &DatasetCollection) -> Result<Vec<u8>> {
    let m = collection.sources();
    let l = collection.sensors();
    let len = collection.len();
    for (i, seq) in collection.sequences.iter().enumerate() {
        if seq.sources.sources() != m || seq.observations.nrows() != l || seq.len() != len || seq.sources.len() != len {
            return Err(Error::invalid(format!(
                "sequence {i} does not match the collection's shape"
            )));
        }
    }
    let to_u32 = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} exceeds u32")));
    let mut out = Vec::with_capacity(40 + 8 * (l * m + collection.sequences.len() * (m + l) * len));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&to_u32(m, "m")?.to_le_bytes());
    out.extend_from_slice(&to_u32(l, "l")?.to_le_bytes());
    out.extend_from_slice(&to_u32(len, "T")?.to_le_bytes());
    out.extend_from_slice(&to_u32(collection.sequences.len(), "sequence count")?.to_le_bytes());
    out.extend_from_slice(&collection.noise_sigma.to_le_bytes());
    out.extend_from_slice(&collection.master_seed.to_le_bytes());
    let a = collection.mixing.matrix();
    for r in 0..l {
        for c in 0..m {
            out.extend_from_slice(&a[(r, c)].to_le_bytes());
        }
    }
    for seq in &collection.sequences {
        for v in seq.sources.samples().as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in seq.observations.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_dataset(collection: &DatasetCollection, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(collection)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetCollection> {
    decode_dataset(&fs::read(path)?)
}

/// Little-endian cursor used by both binary codecs.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub(crate) fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(
                field,
                format!("truncated: need {n} bytes, {} remain", self.buf.len()),
            ));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    pub(crate) fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8).ok_or_else(|| Error::format(field, "size overflow"))?,
            field,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(self, field: &'static str) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::format(field, format!("{} trailing bytes", self.buf.len())))
        }
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetCollection> {
    let mut r = Reader::new(bytes);
    if r.take(8, "magic")? != DATASET_MAGIC {
        return Err(Error::format("magic", "not a UBSSDAT1 dataset file"));
    }
    let m = r.u32("m")? as usize;
    let l = r.u32("l")? as usize;
    let len = r.u32("T")? as usize;
    let count = r.u32("sequence_count")? as usize;
    let noise_sigma = r.f64("noise_sigma")?;
    let master_seed = r.u64("master_seed")?;
    if m == 0 {
        return Err(Error::format("m", "source count must be positive"));
    }
    if l < m {
        return Err(Error::format("l", format!("sensor count {l} below source count {m}")));
    }
    if len == 0 && count > 0 {
        return Err(Error::format("T", "sequence length must be positive"));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::format("noise_sigma", format!("invalid value {noise_sigma}")));
    }
    let a = r.f64s(l * m, "mixing")?;
    let mixing =
        MixingMatrix::new(DMatrix::from_row_slice(l, m, &a)).map_err(|e| Error::format("mixing", e.to_string()))?;
    let mut sequences = Vec::with_capacity(count);
    for _ in 0..count {
        let s = r.f64s(m * len, "sources")?;
        let x = r.f64s(l * len, "observations")?;
        sequences.push(MixtureDataset {
            sources: SourceSequence::new(DMatrix::from_column_slice(m, len, &s))?,
            mixing: mixing.clone(),
            noise_sigma,
            observations: DMatrix::from_column_slice(l, len, &x),
        });
    }
    r.finish("payload")?;
    Ok(DatasetCollection {
        mixing,
        noise_sigma,
        master_seed,
        sequences,
    })
}
