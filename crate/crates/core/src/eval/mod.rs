//! Sample-based comparison of distributions and the scheme convergence
//! benchmark.

pub mod bench;
pub mod knn;
pub mod ot;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub use bench::{convergence_bench, fit_slope, BenchReport, ErrorKind, SchemeCurve};
pub use knn::{kl_knn, KlEstimate};
pub use ot::{assignment, squared_distance_matrix, w2_empirical, DEFAULT_MAX_N};

/// Flat `key=value` metrics file.
///
/// Keys: `seed`, `w2`, `kl`, `kl_raw`, `mean_nll`, `nll_se`, `slope.<scheme>`,
/// `n.<set>`, `flag.<name>`, `config.<key>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub w2: Option<f64>,
    /// KL clipped at zero.
    pub kl: Option<f64>,
    pub kl_raw: Option<f64>,
    pub mean_nll: Option<f64>,
    /// Standard error of `mean_nll`.
    pub nll_se: Option<f64>,
    pub slopes: BTreeMap<String, f64>,
    pub sizes: BTreeMap<String, usize>,
    pub flags: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    pub fn set_kl(&mut self, kl: KlEstimate) {
        self.kl = Some(kl.clipped);
        self.kl_raw = Some(kl.raw);
    }

    pub fn set_nll(&mut self, nll: &[f64]) {
        let (m, se) = mean_and_se(nll);
        self.mean_nll = Some(m);
        self.nll_se = Some(se);
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = format!("seed={}\n", self.seed);
        let opt = [
            ("w2", self.w2),
            ("kl", self.kl),
            ("kl_raw", self.kl_raw),
            ("mean_nll", self.mean_nll),
            ("nll_se", self.nll_se),
        ];
        for (k, v) in opt {
            if let Some(v) = v {
                s.push_str(&format!("{k}={v:?}\n"));
            }
        }
        for (k, v) in &self.slopes {
            s.push_str(&format!("slope.{k}={v:?}\n"));
        }
        for (k, v) in &self.sizes {
            s.push_str(&format!("n.{k}={v}\n"));
        }
        for (k, v) in &self.flags {
            s.push_str(&format!("flag.{k}={v}\n"));
        }
        for (k, v) in &self.config {
            s.push_str(&format!("config.{k}={v}\n"));
        }
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut r = MetricsReport::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: "<metrics>".into(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{k}: {e}")));
            match k {
                "seed" => r.seed = v.parse().map_err(|e| err(format!("seed: {e}")))?,
                "w2" => r.w2 = Some(num(v)?),
                "kl" => r.kl = Some(num(v)?),
                "kl_raw" => r.kl_raw = Some(num(v)?),
                "mean_nll" => r.mean_nll = Some(num(v)?),
                "nll_se" => r.nll_se = Some(num(v)?),
                _ => {
                    if let Some(s) = k.strip_prefix("slope.") {
                        r.slopes.insert(s.into(), num(v)?);
                    } else if let Some(s) = k.strip_prefix("n.") {
                        r.sizes
                            .insert(s.into(), v.parse().map_err(|e| err(format!("{k}: {e}")))?);
                    } else if let Some(s) = k.strip_prefix("flag.") {
                        r.flags.insert(s.into(), v.into());
                    } else if let Some(s) = k.strip_prefix("config.") {
                        r.config.insert(s.into(), v.into());
                    } else {
                        return Err(err(format!("unknown key '{k}'")));
                    }
                }
            }
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            e => e,
        })
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, f64::NAN);
    }
    let var = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
