//! Where an experiment's bi-measure trees come from.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use treeprune::generators::{crt_scale, gw_bimeasure, stable_scale, MuChoice, NuChoice, OffspringDistribution, OffspringFamily};
use treeprune::measure::{BiMeasureJson, BiMeasureTree};
use treeprune::rng::{self, SimRng};

use crate::config::{usage, CliError, CliResult};

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct SourceArgs {
    /// Bi-measure tree JSON (as written by `generate`).
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Offspring law, e.g. poisson:1.0, geometric:0.5, binary, stable:alpha=1.5,C=0.3, table:0.5,0,0.5.
    #[arg(long)]
    pub family: Option<String>,
    /// Number of non-root nodes of the conditioned tree.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Edge length; defaults to σ/√N (or the stable scaling for heavy tails).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Sampling measure: ske or nod.
    #[arg(long)]
    pub mu: Option<String>,
    /// Pruning measure: zero, ske, nod, adh, height:h or ske+adh:b.
    #[arg(long)]
    pub nu: Option<String>,
}

/// The file format of `generate`: the bi-measure tree plus its config.
#[derive(Serialize, Deserialize)]
pub struct TreeFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    #[serde(flatten)]
    pub x: BiMeasureJson,
}

pub enum Source {
    Fixed(BiMeasureTree),
    Generated { eta: OffspringDistribution, n: usize, a: f64, mu: MuChoice, nu: NuChoice },
}

/// Stream reserved for drawing the instance, disjoint from replicate streams.
pub fn instance_rng(seed: u64) -> SimRng {
    rng::tagged(seed, u64::MAX, 0)
}

impl SourceArgs {
    /// Fills in defaults so the embedded config is complete.
    pub fn resolve(&mut self, mu: &str, nu: &str) -> CliResult<()> {
        match (&self.tree, &self.family) {
            (Some(_), Some(_)) => return usage("give either --tree or --family, not both"),
            (None, None) => return usage("a tree source is required: --tree <file> or --family <law> --nodes <N>"),
            (Some(_), None) => return Ok(()),
            (None, Some(_)) => {}
        }
        let eta = self.family()?;
        let Some(n) = self.nodes else { return usage("--family needs --nodes") };
        if n == 0 {
            return usage("--nodes must be at least 1");
        }
        if self.scale.is_none() {
            self.scale = Some(default_scale(&eta, n)?);
        }
        self.mu.get_or_insert_with(|| mu.into());
        self.nu.get_or_insert_with(|| nu.into());
        Ok(())
    }

    fn family(&self) -> CliResult<OffspringDistribution> {
        let s = self.family.as_deref().unwrap_or_default();
        s.parse().map_err(|e: treeprune::Error| CliError::Usage(format!("bad family '{s}': {e}")))
    }

    pub fn load(&self) -> CliResult<Source> {
        if let Some(path) = &self.tree {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
            let file: TreeFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            return Ok(Source::Fixed(BiMeasureTree::from_json(&file.x)?));
        }
        let mu: MuChoice = parse_choice(self.mu.as_deref().unwrap_or("ske"))?;
        let nu: NuChoice = parse_choice(self.nu.as_deref().unwrap_or("ske"))?;
        let a = self.scale.expect("resolved");
        if !(a > 0.0 && a.is_finite()) {
            return Err(CliError::Validation(format!("scale must be positive, got {a}")));
        }
        Ok(Source::Generated { eta: self.family()?, n: self.nodes.expect("resolved"), a, mu, nu })
    }
}

fn parse_choice<T: std::str::FromStr<Err = treeprune::Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(|e: treeprune::Error| CliError::Usage(e.to_string()))
}

fn default_scale(eta: &OffspringDistribution, n: usize) -> CliResult<f64> {
    match eta.family() {
        OffspringFamily::HeavyTail { alpha, c } => Ok(stable_scale(n, *alpha, *c)?),
        _ => {
            let v = eta.variance();
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Validation(format!("offspring variance {v} gives no CRT scaling; pass --scale")));
            }
            Ok(crt_scale(n, v.sqrt()))
        }
    }
}

impl Source {
    pub fn instance(&self, rng: &mut SimRng) -> treeprune::Result<BiMeasureTree> {
        match self {
            Source::Fixed(x) => Ok(x.clone()),
            Source::Generated { eta, n, a, mu, nu } => gw_bimeasure(eta, *n, *a, *mu, *nu, rng),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Source::Fixed(_))
    }
}
