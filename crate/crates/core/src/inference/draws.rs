//! Posterior draw storage and persistence.
//!
//! Binary layout (little endian, extension `.draws`):
//!
//! ```text
//! magic    b"PDRW"
//! u32      format version (1)
//! u32      chains
//! u32      draws per chain
//! u32      dimension
//! u64      seed
//! u64      divergence count
//! f64[chains]              adapted step sizes
//! f64[dim][chains][draws]  parameter values, parameter-major
//! ```
//!
//! Parameter names and diagnostics travel in a JSON metadata sidecar.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PDRW";
const VERSION: u32 = 1;

/// Post-warmup draws from a multi-chain run, stored on the constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub chains: usize,
    pub draws_per_chain: usize,
    pub dim: usize,
    pub parameter_names: Vec<String>,
    /// Flat [chain][draw][param].
    pub values: Vec<f64>,
    pub divergence_count: usize,
    pub step_sizes: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawsMetadata {
    pub seed: u64,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub dim: usize,
    pub parameter_names: Vec<String>,
    pub divergence_count: usize,
    pub step_sizes: Vec<f64>,
    pub rhat: Option<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn value(&self, chain: usize, draw: usize, param: usize) -> f64 {
        self.values[(chain * self.draws_per_chain + draw) * self.dim + param]
    }

    pub fn draw(&self, chain: usize, draw: usize) -> &[f64] {
        let start = (chain * self.draws_per_chain + draw) * self.dim;
        &self.values[start..start + self.dim]
    }

    pub fn n_draws_total(&self) -> usize {
        self.chains * self.draws_per_chain
    }

    /// All draws of one parameter in a single chain.
    pub fn chain_param(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.draws_per_chain).map(|d| self.value(chain, d, param)).collect()
    }

    /// All draws of one parameter pooled across chains.
    pub fn pooled_param(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_draws_total());
        for c in 0..self.chains {
            for d in 0..self.draws_per_chain {
                out.push(self.value(c, d, param));
            }
        }
        out
    }

    /// Iterate over all draws (pooled across chains) as parameter slices.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }

    pub fn metadata(&self, rhat: Option<Vec<f64>>) -> DrawsMetadata {
        DrawsMetadata {
            seed: self.seed,
            chains: self.chains,
            draws_per_chain: self.draws_per_chain,
            dim: self.dim,
            parameter_names: self.parameter_names.clone(),
            divergence_count: self.divergence_count,
            step_sizes: self.step_sizes.clone(),
            rhat,
        }
    }

    /// Write the columnar binary file plus the JSON metadata sidecar
    /// (`<path>.meta.json`).
    pub fn save(&self, path: &Path, rhat: Option<Vec<f64>>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.chains as u32).to_le_bytes())?;
        w.write_all(&(self.draws_per_chain as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.divergence_count as u64).to_le_bytes())?;
        for s in &self.step_sizes {
            w.write_all(&s.to_le_bytes())?;
        }
        for p in 0..self.dim {
            for c in 0..self.chains {
                for d in 0..self.draws_per_chain {
                    w.write_all(&self.value(c, d, p).to_le_bytes())?;
                }
            }
        }
        w.flush()?;

        let meta = self.metadata(rhat);
        let meta_path = sidecar_path(path);
        std::fs::write(meta_path, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::validation("not a posterior draws file (bad magic)".to_string()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::validation(format!("unsupported draws format version {version}")));
        }
        let chains = read_u32(&mut r)? as usize;
        let draws = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let divergence_count = read_u64(&mut r)? as usize;
        let mut step_sizes = Vec::with_capacity(chains);
        for _ in 0..chains {
            step_sizes.push(read_f64(&mut r)?);
        }
        let mut values = vec![0.0; chains * draws * dim];
        for p in 0..dim {
            for c in 0..chains {
                for d in 0..draws {
                    values[(c * draws + d) * dim + p] = read_f64(&mut r)?;
                }
            }
        }

        let meta_path = sidecar_path(path);
        let parameter_names = if meta_path.exists() {
            let meta: DrawsMetadata = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
            meta.parameter_names
        } else {
            (0..dim).map(|i| format!("theta[{i}]")).collect()
        };

        Ok(PosteriorDraws {
            chains,
            draws_per_chain: draws,
            dim,
            parameter_names,
            values,
            divergence_count,
            step_sizes,
            seed,
        })
    }

    /// CSV export (chain, draw, then one column per parameter); intended for
    /// small runs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.parameter_names.iter().cloned());
        w.write_record(&header)?;
        for c in 0..self.chains {
            for d in 0..self.draws_per_chain {
                let mut rec = vec![c.to_string(), d.to_string()];
                rec.extend(self.draw(c, d).iter().map(|v| format!("{v}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Mean and central interval of a sample.
pub fn mean_and_interval(values: &[f64], mass: f64) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, (1.0 - mass) / 2.0);
    let hi = quantile_sorted(&sorted, 1.0 - (1.0 - mass) / 2.0);
    (mean, lo, hi)
}

/// Linear-interpolation quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}
