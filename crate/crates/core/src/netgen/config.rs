use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shapes the generator knows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Complete,
    Ar,
    TwoBlocks,
    TwoNegBlocks,
    Random,
    Hub,
    Band,
    ScaleFree,
    OverlappedCluster,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Complete,
        Family::Ar,
        Family::TwoBlocks,
        Family::TwoNegBlocks,
        Family::Random,
        Family::Hub,
        Family::Band,
        Family::ScaleFree,
        Family::OverlappedCluster,
    ];

    /// Families whose weights are drawn from the mixture model itself; the rest go
    /// through a sparse precision matrix.
    pub fn is_l2n(self) -> bool {
        matches!(self, Family::Complete | Family::Ar | Family::TwoBlocks | Family::TwoNegBlocks)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Complete => "complete",
            Family::Ar => "ar",
            Family::TwoBlocks => "two_blocks",
            Family::TwoNegBlocks => "two_neg_blocks",
            Family::Random => "random",
            Family::Hub => "hub",
            Family::Band => "band",
            Family::ScaleFree => "scale_free",
            Family::OverlappedCluster => "overlapped_cluster",
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown network family {s:?}")))
    }
}

/// Everything needed to generate one synthetic dataset.
///
/// Family parameters that a family does not use are ignored. In TOML:
///
/// ```toml
/// family = "hub"
/// G = 1000
/// N = 70
/// g = 100
/// seed = 7
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub family: Family,
    #[serde(rename = "G")]
    pub n_genes: usize,
    #[serde(rename = "N")]
    pub n_samples: usize,
    /// Block size for the mixture-model families.
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    /// Edge probability (random, overlapped_cluster).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Group count (hub, overlapped_cluster) or bandwidth (band).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
    #[serde(default = "default_v")]
    pub v: f64,
    #[serde(default = "default_u")]
    pub u: f64,
    #[serde(default)]
    pub theta1: f64,
    #[serde(default = "default_kappa_sq")]
    pub kappa1_sq: f64,
    /// Defaults to `theta1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2: Option<f64>,
    /// Defaults to `kappa1_sq`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa2_sq: Option<f64>,
    /// Standard deviation of the weights of absent edges.
    #[serde(default = "default_null_sd")]
    pub null_sd: f64,
    /// Edges added per arriving node (scale_free).
    #[serde(default = "default_ba_m")]
    pub m: usize,
    /// Size of the initial clique (scale_free).
    #[serde(default = "default_ba_seed_nodes")]
    pub seed_nodes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_v() -> f64 {
    0.3
}
fn default_u() -> f64 {
    0.1
}
fn default_kappa_sq() -> f64 {
    0.25
}
fn default_null_sd() -> f64 {
    1.0
}
fn default_ba_m() -> usize {
    1
}
fn default_ba_seed_nodes() -> usize {
    2
}

impl NetworkConfig {
    /// A config with every optional parameter at its default.
    pub fn new(family: Family, n_genes: usize, n_samples: usize) -> Self {
        NetworkConfig {
            family,
            n_genes,
            n_samples,
            block_size: None,
            p: None,
            g: None,
            v: default_v(),
            u: default_u(),
            theta1: 0.0,
            kappa1_sq: default_kappa_sq(),
            theta2: None,
            kappa2_sq: None,
            null_sd: default_null_sd(),
            m: default_ba_m(),
            seed_nodes: default_ba_seed_nodes(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Block size, falling back to 100 (one block) or 50 (two blocks).
    pub fn s(&self) -> usize {
        self.block_size.unwrap_or(match self.family {
            Family::TwoBlocks | Family::TwoNegBlocks => 50,
            _ => 100,
        })
    }

    pub fn theta2(&self) -> f64 {
        self.theta2.unwrap_or(self.theta1)
    }

    pub fn kappa2_sq(&self) -> f64 {
        self.kappa2_sq.unwrap_or(self.kappa1_sq)
    }

    pub(crate) fn need_p(&self) -> Result<f64> {
        match self.p {
            Some(p) if p > 0.0 && p <= 1.0 => Ok(p),
            Some(p) => Err(Error::invalid(format!("p = {p} must lie in (0,1]"))),
            None => Err(Error::invalid(format!("{} needs p", self.family.name()))),
        }
    }

    pub(crate) fn need_g(&self) -> Result<usize> {
        match self.g {
            Some(g) if g >= 1 => Ok(g),
            _ => Err(Error::invalid(format!("{} needs g >= 1", self.family.name()))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gn = self.n_genes;
        if gn < 2 {
            return Err(Error::TooFewGenes(gn));
        }
        if self.n_samples < 4 {
            return Err(Error::TooFewSamples(self.n_samples));
        }
        match self.family {
            Family::Complete | Family::Ar => {
                if self.s() < 2 || self.s() > gn {
                    return Err(Error::invalid(format!("S = {} must lie in [2, G]", self.s())));
                }
            }
            Family::TwoBlocks | Family::TwoNegBlocks => {
                if self.s() < 2 || 2 * self.s() > gn {
                    return Err(Error::invalid(format!("S = {} must lie in [2, G/2]", self.s())));
                }
            }
            Family::Random => {
                self.need_p()?;
            }
            Family::Hub => {
                let g = self.need_g()?;
                if g > gn / 2 {
                    return Err(Error::invalid(format!("hub needs at least two nodes per group; g = {g}")));
                }
            }
            Family::Band => {
                let g = self.need_g()?;
                if g >= gn {
                    return Err(Error::invalid(format!("bandwidth g = {g} must be below G")));
                }
            }
            Family::ScaleFree => {
                if self.m < 1 || self.seed_nodes < 2 || self.m > self.seed_nodes || self.seed_nodes > gn {
                    return Err(Error::invalid(format!(
                        "scale_free needs 1 <= m <= seed_nodes <= G with seed_nodes >= 2 (m = {}, seed_nodes = {})",
                        self.m, self.seed_nodes
                    )));
                }
            }
            Family::OverlappedCluster => {
                self.need_p()?;
                let g = self.need_g()?;
                if gn / g < 2 {
                    return Err(Error::invalid(format!("overlapped_cluster needs G/g >= 2; g = {g}")));
                }
            }
        }
        if self.family.is_l2n() {
            if !(self.kappa1_sq > 0.0 && self.kappa2_sq() > 0.0) {
                return Err(Error::invalid("kappa1_sq and kappa2_sq must be positive"));
            }
            if !(self.theta1.is_finite() && self.theta2().is_finite()) {
                return Err(Error::invalid("theta1 and theta2 must be finite"));
            }
            if !(self.null_sd >= 0.0 && self.null_sd.is_finite()) {
                return Err(Error::invalid(format!("null_sd = {} must be non-negative", self.null_sd)));
            }
        } else if !(self.v > 0.0 && self.u > 0.0) {
            return Err(Error::invalid(format!("v = {} and u = {} must be positive", self.v, self.u)));
        }
        Ok(())
    }
}
