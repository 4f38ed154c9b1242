//! Multi-domain dataset generation, leave-one-domain-out splits and the
//! on-disk directory format.
//!
//! Directory layout:
//!
//! * `manifest.txt`: `key=value` lines (seed, counts, dims, checksum)
//! * `domain_<d>.bin`: one record per sample, little-endian:
//!   `u8 label | u8 domain | C·H·W × f64 image | 3·H·W × u8 region ids`
//!   (region maps ordered sub-part, part, whole)

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{DataError, Result};
use crate::render::{render, DomainStyle, Sample, CHANNELS, NUM_DOMAINS};
use crate::scene::{make_scene, SceneSpec, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    pub seed: u64,
    /// training samples per domain
    pub per_domain: usize,
    /// additional validation samples per domain
    pub val_per_domain: usize,
    pub height: usize,
    pub width: usize,
}

impl DatasetConfig {
    pub fn new(seed: u64, per_domain: usize) -> Self {
        Self {
            seed,
            per_domain,
            val_per_domain: per_domain / 10,
            height: 32,
            width: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_domain < 40 {
            return Err(DataError::InvalidConfig(format!(
                "per_domain must be at least 40, got {}",
                self.per_domain
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(DataError::InvalidConfig(format!(
                "image must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn samples_per_domain(&self) -> usize {
        self.per_domain + self.val_per_domain
    }
}

/// Stable 64-bit mix of a seed with stream coordinates (splitmix64 finaliser).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Balanced label sequence for one domain: round-robin classes, shuffled.
fn domain_labels(cfg: &DatasetConfig, domain: usize) -> Vec<usize> {
    let n = cfg.samples_per_domain();
    let mut train: Vec<usize> = (0..cfg.per_domain).map(|i| i % NUM_CLASSES).collect();
    let mut val: Vec<usize> = (0..cfg.val_per_domain).map(|i| i % NUM_CLASSES).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xD0, domain as u64]));
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    train.extend(val);
    debug_assert_eq!(train.len(), n);
    train
}

/// Scene and rendering of sample `index` of `domain`; a pure function of
/// `(seed, domain, index)`.
pub fn generate_one(cfg: &DatasetConfig, domain: usize, index: usize, label: usize) -> (SceneSpec, Sample) {
    let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5C, domain as u64, index as u64]));
    let scene = make_scene(label, cfg.height, cfg.width, &mut scene_rng);
    let mut render_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x4E, domain as u64, index as u64]));
    let sample = render(&scene, &DomainStyle::for_domain(domain), cfg.height, cfg.width, &mut render_rng);
    (scene, sample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    /// `domains[d]` holds `per_domain` training samples followed by
    /// `val_per_domain` validation samples
    pub domains: Vec<Vec<Sample>>,
}

impl Dataset {
    pub fn generate(config: DatasetConfig) -> Result<Self> {
        config.validate()?;
        let domains = (0..NUM_DOMAINS)
            .map(|d| {
                domain_labels(&config, d)
                    .into_iter()
                    .enumerate()
                    .map(|(i, label)| generate_one(&config, d, i, label).1)
                    .collect()
            })
            .collect();
        Ok(Self { config, domains })
    }

    pub fn train(&self, domain: usize) -> &[Sample] {
        &self.domains[domain][..self.config.per_domain]
    }

    pub fn validation(&self, domain: usize) -> &[Sample] {
        &self.domains[domain][self.config.per_domain..]
    }

    pub fn manifest(&self) -> BTreeMap<String, String> {
        let c = &self.config;
        let mut m = BTreeMap::new();
        m.insert("seed".into(), c.seed.to_string());
        m.insert("per_domain".into(), c.per_domain.to_string());
        m.insert("val_per_domain".into(), c.val_per_domain.to_string());
        m.insert("height".into(), c.height.to_string());
        m.insert("width".into(), c.width.to_string());
        m.insert("channels".into(), CHANNELS.to_string());
        m.insert("domains".into(), NUM_DOMAINS.to_string());
        m.insert("classes".into(), NUM_CLASSES.to_string());
        m.insert("levels".into(), "3".into());
        m.insert("byte_order".into(), "little-endian".into());
        m.insert("checksum".into(), self.checksum());
        m
    }

    fn domain_bytes(&self, d: usize) -> Vec<u8> {
        let mut buf = Vec::new();
        for s in &self.domains[d] {
            buf.push(s.label as u8);
            buf.push(s.domain_id as u8);
            for v in &s.image {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for level in &s.regions {
                buf.extend_from_slice(level);
            }
        }
        buf
    }

    /// SHA-256 over the record files in domain order, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for d in 0..self.domains.len() {
            h.update(self.domain_bytes(d));
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for d in 0..self.domains.len() {
            fs::write(dir.join(format!("domain_{d}.bin")), self.domain_bytes(d))?;
        }
        let mut f = fs::File::create(dir.join("manifest.txt"))?;
        for (k, v) in self.manifest() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let m = parse_key_values(&text)?;
        let get = |k: &str| -> Result<usize> {
            m.get(k)
                .ok_or_else(|| DataError::Format(format!("manifest missing {k}")))?
                .parse()
                .map_err(|e| DataError::Format(format!("manifest {k}: {e}")))
        };
        let config = DatasetConfig {
            seed: get("seed")? as u64,
            per_domain: get("per_domain")?,
            val_per_domain: get("val_per_domain")?,
            height: get("height")?,
            width: get("width")?,
        };
        let (h, w) = (config.height, config.width);
        let record = 2 + CHANNELS * h * w * 8 + 3 * h * w;
        let mut domains = Vec::with_capacity(NUM_DOMAINS);
        for d in 0..get("domains")? {
            let bytes = fs::read(dir.join(format!("domain_{d}.bin")))?;
            if bytes.len() % record != 0 {
                return Err(DataError::Format(format!(
                    "domain_{d}.bin: {} bytes is not a multiple of the {record}-byte record",
                    bytes.len()
                )));
            }
            let samples = bytes
                .chunks_exact(record)
                .map(|r| {
                    let img_end = 2 + CHANNELS * h * w * 8;
                    let image = r[2..img_end]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    let lv = |l: usize| r[img_end + l * h * w..img_end + (l + 1) * h * w].to_vec();
                    Sample {
                        image,
                        height: h,
                        width: w,
                        label: r[0] as usize,
                        domain_id: r[1] as usize,
                        regions: [lv(0), lv(1), lv(2)],
                    }
                })
                .collect();
            domains.push(samples);
        }
        let ds = Self { config, domains };
        if let Some(expected) = m.get("checksum") {
            let actual = ds.checksum();
            if &actual != expected {
                return Err(DataError::Format(format!("checksum mismatch: manifest {expected}, data {actual}")));
            }
        }
        Ok(ds)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::Format(format!("line {}: expected key=value", n + 1)))?;
        m.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(m)
}

/// One source domain's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub domain_id: usize,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LodoSplit {
    pub held_out: usize,
    /// one client per source domain, in ascending domain order
    pub clients: Vec<ClientShard>,
    /// every sample of the held-out domain
    pub test: Vec<Sample>,
}

pub fn build_lodo_split(ds: &Dataset, held_out: usize) -> Result<LodoSplit> {
    if held_out >= ds.domains.len() {
        return Err(DataError::InvalidConfig(format!(
            "held-out domain {held_out} out of range 0..{}",
            ds.domains.len()
        )));
    }
    let clients = (0..ds.domains.len())
        .filter(|&d| d != held_out)
        .enumerate()
        .map(|(client_id, d)| ClientShard {
            client_id,
            domain_id: d,
            train: ds.train(d).to_vec(),
            validation: ds.validation(d).to_vec(),
        })
        .collect();
    Ok(LodoSplit {
        held_out,
        clients,
        test: ds.domains[held_out].clone(),
    })
}
