use std::path::Path;

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use star_kg_core::network::{gaussian_on_branch, indicator, vertex_gaussian, NetworkFunction, StarNetwork, Support};
use star_kg_core::transform::{LambdaMax, SpectralOptions};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub eigen: EigenConfig,
    #[serde(default)]
    pub resolvent: ResolventConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub transform: TransformConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub c: Vec<f64>,
    pub a: Vec<f64>,
}

/// Truncated star used by the finite-difference oracle.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub length: f64,
    pub h: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { length: 30.0, h: 2.5e-3 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum LambdaMaxConfig {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Tail tolerance of the automatic spectral window, and relative
    /// tolerance of the oracle density integral.
    pub rel_tol: f64,
    /// Absolute floor added to every check tolerance.
    pub abs_tol: f64,
    pub lambda_max: LambdaMaxConfig,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            lambda_max: LambdaMaxConfig::Named("auto".into()),
        }
    }
}

/// One term of a test function; a source is the sum of its terms.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    Gaussian {
        branch: usize,
        center: f64,
        width: f64,
        #[serde(default = "unit")]
        amplitude: [f64; 2],
    },
    VertexGaussian {
        width: f64,
        #[serde(default = "unit")]
        amplitude: [f64; 2],
    },
    Indicator { branch: usize, lo: f64, hi: f64 },
}

fn unit() -> [f64; 2] {
    [1.0, 0.0]
}

pub type Source = Vec<Term>;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenConfig {
    /// Uniform real lambda grid `[lo, hi]` with `count` points.
    pub lambda_range: [f64; 2],
    pub count: usize,
    /// Lambdas whose eigenfunctions are tabulated in space.
    pub profiles: Vec<f64>,
    pub x_max: f64,
    pub dx: f64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            lambda_range: [0.0, 20.0],
            count: 201,
            profiles: vec![],
            x_max: 10.0,
            dx: 0.02,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolventConfig {
    pub lambda: [f64; 2],
    pub source: Source,
    pub x_max: f64,
    pub dx: f64,
    pub oracle: bool,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        Self {
            lambda: [1.0, 1.0],
            source: default_source(),
            x_max: 10.0,
            dx: 0.01,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub lambdas: Vec<f64>,
    /// Spectral interval `(a, b)` of the projection experiment.
    pub interval: [f64; 2],
    pub source: Source,
    pub x_max: f64,
    pub dx: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![],
            interval: [0.5, 12.0],
            source: default_source(),
            x_max: 5.0,
            dx: 0.02,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    pub functions: Vec<Source>,
    pub x_max: f64,
    pub dx: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            functions: vec![default_source()],
            x_max: 5.0,
            dx: 0.02,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TunnelConfig {
    pub band: [f64; 2],
    /// 0-based branch index.
    pub branch: usize,
    pub t: f64,
    pub window: [f64; 2],
    #[serde(default)]
    pub source: Option<Source>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub u0: Source,
    pub v0: Source,
    pub times: Vec<f64>,
    pub x_max: f64,
    pub dx: f64,
    pub oracle: bool,
    pub tunnel: Option<TunnelConfig>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            u0: vec![Term::VertexGaussian { width: 0.6, amplitude: unit() }],
            v0: vec![],
            times: vec![0.0, 1.0, 2.0, 3.0],
            x_max: 10.0,
            dx: 0.02,
            oracle: false,
            tunnel: None,
        }
    }
}

fn default_source() -> Source {
    vec![Term::VertexGaussian { width: 0.6, amplitude: unit() }]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let net = self.network()?;
        if !(self.grid.length > 0.0 && self.grid.h > 0.0) {
            bail!("grid.L and grid.h must be positive");
        }
        if !(self.quadrature.rel_tol > 0.0 && self.quadrature.abs_tol >= 0.0) {
            bail!("quadrature tolerances must be positive");
        }
        self.spectral_options()?;
        let n = net.n();
        let mut sources: Vec<&Source> = vec![&self.resolvent.source, &self.measure.source, &self.evolve.u0, &self.evolve.v0];
        sources.extend(self.transform.functions.iter());
        if let Some(t) = &self.evolve.tunnel {
            if let Some(s) = &t.source {
                sources.push(s);
            }
        }
        for s in sources {
            for term in s {
                term.check(n)?;
            }
        }
        for (name, dx) in [
            ("eigen", self.eigen.dx),
            ("resolvent", self.resolvent.dx),
            ("measure", self.measure.dx),
            ("transform", self.transform.dx),
            ("evolve", self.evolve.dx),
        ] {
            if !(dx > 0.0) {
                bail!("{name}.dx must be positive");
            }
        }
        if self.eigen.count < 2 || !(self.eigen.lambda_range[0] < self.eigen.lambda_range[1]) {
            bail!("eigen needs count >= 2 and lambda_range[0] < lambda_range[1]");
        }
        Ok(())
    }

    pub fn network(&self) -> Result<StarNetwork> {
        StarNetwork::new(self.network.c.clone(), self.network.a.clone()).context("invalid network")
    }

    pub fn spectral_options(&self) -> Result<SpectralOptions> {
        let lambda_max = match &self.quadrature.lambda_max {
            LambdaMaxConfig::Fixed(v) if *v > 0.0 => LambdaMax::Fixed(*v),
            LambdaMaxConfig::Named(s) if s == "auto" => LambdaMax::Auto {
                tail_tol: self.quadrature.rel_tol,
            },
            other => bail!("quadrature.lambda_max must be \"auto\" or a positive number, got {other:?}"),
        };
        Ok(SpectralOptions {
            lambda_max,
            ..SpectralOptions::default()
        })
    }
}

impl Term {
    fn check(&self, n: usize) -> Result<()> {
        match *self {
            Term::Gaussian { branch, width, .. } if branch >= n || width <= 0.0 => {
                bail!("gaussian term needs branch < {n} and a positive width")
            }
            Term::VertexGaussian { width, .. } if width <= 0.0 => bail!("vertex gaussian needs a positive width"),
            Term::Indicator { branch, lo, hi } if branch >= n || !(0.0 <= lo && lo < hi) => {
                bail!("indicator needs branch < {n} and 0 <= lo < hi")
            }
            _ => Ok(()),
        }
    }

    fn build(&self, n: usize) -> NetworkFunction {
        match *self {
            Term::Gaussian {
                branch,
                center,
                width,
                amplitude,
            } => gaussian_on_branch(n, branch, center, width, Complex64::new(amplitude[0], amplitude[1])),
            Term::VertexGaussian { width, amplitude } => vertex_gaussian(n, width, Complex64::new(amplitude[0], amplitude[1])),
            Term::Indicator { branch, lo, hi } => indicator(n, branch, lo, hi),
        }
    }
}

pub fn build_source(source: &Source, n: usize) -> NetworkFunction {
    let one = Complex64::new(1.0, 0.0);
    source
        .iter()
        .map(|t| t.build(n))
        .reduce(|acc, f| acc.combine(one, &f, one))
        .unwrap_or_else(|| NetworkFunction::zero(n).set_support(Support::Compact(0.0)))
}
