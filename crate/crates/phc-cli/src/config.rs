use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use phasecascade::baseflow::BaseScenario;
use phasecascade::direct::{DissipationConfig, InstabilityConfig, InstabilityVariant, SpectrumConfig, SupportConfig};
use phasecascade::Grid;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Flag-backed variables that are not config overrides.
const RESERVED_ENV: [&str; 4] = ["PHC_CONFIG", "PHC_OUT", "PHC_SEED", "PHC_WORKERS"];

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub scenario: String,
    pub seed: u64,
    pub grid: GridSection,
    pub cascade: CascadeSection,
    pub sweep: SweepSection,
    pub direct: DirectSection,
    pub tolerances: Tolerances,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            scenario: "shear".into(),
            seed: 0,
            grid: GridSection::default(),
            cascade: CascadeSection::default(),
            sweep: SweepSection::default(),
            direct: DirectSection::default(),
            tolerances: Tolerances::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub m_theta: usize,
    pub dt: f64,
    pub t_end: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { dim: 2, n: 32, m_theta: 8, dt: 0.01, t_end: 0.2 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeSection {
    pub l: usize,
    pub order: usize,
    pub nu: f64,
    pub nu_base: f64,
    pub snapshot_every: usize,
    /// zero | transverse | random
    pub data: String,
    pub amplitude: f64,
    /// Amplitude of the order-2 mean (a cos 2x₂, 0); transverse data only.
    pub mean_shear: f64,
    /// Lower bound c of the phase gradient.
    pub phase_c: f64,
    pub auto_project: bool,
    pub drift_tol: f64,
}

impl Default for CascadeSection {
    fn default() -> Self {
        CascadeSection {
            l: 1,
            order: 2,
            nu: 0.0,
            nu_base: 0.0,
            snapshot_every: 10,
            data: "zero".into(),
            amplitude: 1.0,
            mean_shear: 0.0,
            phase_c: 1e-2,
            auto_project: false,
            drift_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Explicit ε list; overrides eps0/count.
    pub eps: Option<Vec<f64>>,
    pub eps0: f64,
    pub count: usize,
    pub cleanup: bool,
    /// Snapshot time; the final snapshot when absent.
    pub t: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { eps: None, eps0: 0.125, count: 5, cleanup: true, t: None }
    }
}

impl SweepSection {
    pub fn values(&self) -> Vec<f64> {
        self.eps.clone().unwrap_or_else(|| phasecascade::assemble::epsilon_sweep(self.eps0, self.count))
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectSection {
    /// taylor-green | random | shear | shear-layer
    pub datum: String,
    pub nu_eff: f64,
    pub every: usize,
    /// ε of the shear layer.
    pub eps: f64,
}

impl Default for DirectSection {
    fn default() -> Self {
        DirectSection { datum: "taylor-green".into(), nu_eff: 0.0, every: 10, eps: 0.125 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub polarization: f64,
    pub drift: f64,
    pub corrector_identity: f64,
    pub divergence_balance: f64,
    pub phase_law: f64,
    pub cleanup_divergence: f64,
    pub direct_error: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            polarization: 1e-6,
            drift: 1e-6,
            corrector_identity: 1e-9,
            divergence_balance: 1e-9,
            phase_law: 1e-6,
            cleanup_divergence: 1e-10,
            direct_error: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub instability: InstabilitySection,
    pub spectrum: SpectrumSection,
    pub dissipation: DissipationSection,
    pub support: SupportSection,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstabilitySection {
    pub n: Option<usize>,
    pub m_theta: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub order: Option<usize>,
    pub amplitude: Option<f64>,
    pub beta: Option<f64>,
    pub eps: Option<Vec<f64>>,
    pub snapshot_every: Option<usize>,
    /// recipe | tangential | identical
    pub variant: Option<String>,
    pub slope_max: Option<f64>,
    pub limit_tol: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub n: Option<usize>,
    pub m_theta: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub l: Option<usize>,
    pub order: Option<usize>,
    pub amplitude: Option<f64>,
    pub eps: Option<f64>,
    pub sweep: Option<Vec<f64>>,
    pub snapshot_every: Option<usize>,
    pub gap_width: Option<usize>,
    pub gap_fraction: Option<f64>,
    pub band_fraction: Option<f64>,
    pub slope_tol: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissipationSection {
    pub l: Option<usize>,
    pub nu: Option<f64>,
    pub eps: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub cascade_n: Option<usize>,
    pub cascade_order: Option<usize>,
    pub t: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupportSection {
    pub n: Option<usize>,
    pub m_theta: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub radius: Option<f64>,
    pub amplitude: Option<f64>,
    pub snapshot_every: Option<usize>,
    pub tol: Option<f64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $(if let Some(v) = $src.$f.clone() { $dst.$f = v; })*
    };
}

impl InstabilitySection {
    pub fn build(&self) -> Result<InstabilityConfig> {
        let mut c = InstabilityConfig::default();
        overlay!(c, self; n, m_theta, dt, t_end, order, amplitude, beta, eps, snapshot_every, slope_max, limit_tol);
        if let Some(v) = &self.variant {
            c.variant = match v.as_str() {
                "recipe" => InstabilityVariant::Recipe,
                "tangential" => InstabilityVariant::Tangential,
                "identical" => InstabilityVariant::Identical,
                other => bail!("experiment.instability.variant: unknown variant `{other}` (recipe | tangential | identical)"),
            };
        }
        Ok(c)
    }
}

impl SpectrumSection {
    pub fn build(&self) -> SpectrumConfig {
        let mut c = SpectrumConfig::default();
        overlay!(c, self; n, m_theta, dt, t_end, l, order, amplitude, eps, sweep, snapshot_every, gap_width, gap_fraction, band_fraction, slope_tol);
        c
    }
}

impl DissipationSection {
    pub fn build(&self) -> DissipationConfig {
        let mut c = DissipationConfig::default();
        overlay!(c, self; l, nu, eps, n, cascade_n, cascade_order, t, dt);
        c
    }
}

impl SupportSection {
    pub fn build(&self) -> SupportConfig {
        let mut c = SupportConfig::default();
        overlay!(c, self; n, m_theta, dt, t_end, radius, amplitude, snapshot_every, tol);
        c
    }
}

/// Named starting points; file keys and env overrides apply on top.
pub fn preset(name: &str) -> Result<Table> {
    let text = match name {
        "shear-l2-n6" => {
            r#"
            scenario = "shear"
            [grid]
            dim = 2
            n = 64
            m_theta = 16
            dt = 0.01
            t_end = 0.5
            [cascade]
            l = 2
            order = 6
            nu = 0.0
            snapshot_every = 25
            data = "transverse"
            amplitude = 1.0
            mean_shear = 0.2
            [sweep]
            eps = [0.125, 0.0625, 0.03125, 0.015625, 0.0078125]
            cleanup = true
            "#
        }
        "zero" => {
            r#"
            scenario = "zero"
            [grid]
            n = 16
            m_theta = 4
            dt = 0.05
            t_end = 0.2
            [cascade]
            l = 1
            order = 2
            data = "zero"
            snapshot_every = 2
            "#
        }
        other => bail!("unknown preset `{other}` (known: shear-l2-n6, zero)"),
    };
    Ok(text.parse::<Table>().expect("preset tables parse"))
}

fn merge(dst: &mut Table, src: Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

fn parse_env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// PHC_SECTION__KEY=value becomes section.key = value.
fn env_overrides(vars: &BTreeMap<String, String>) -> Result<Table> {
    let mut out = Table::new();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix("PHC_") else { continue };
        if RESERVED_ENV.contains(&name.as_str()) || rest.is_empty() {
            continue;
        }
        let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            bail!("environment override {name}: empty key segment");
        }
        let mut node = &mut out;
        for seg in &path[..path.len() - 1] {
            let entry = node.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new()));
            node = match entry {
                Value::Table(t) => t,
                _ => bail!("environment override {name}: `{seg}` is not a section"),
            };
        }
        node.insert(path[path.len() - 1].clone(), parse_env_value(raw));
    }
    Ok(out)
}

pub fn env_vars() -> BTreeMap<String, String> {
    std::env::vars().filter(|(k, _)| k.starts_with("PHC_")).collect()
}

/// File text, then preset underneath, then environment on top.
pub fn load(text: Option<&str>, origin: &str, env: &BTreeMap<String, String>) -> Result<RunConfig> {
    let file = match text {
        Some(t) => {
            // deserializing the raw text gives line and key diagnostics
            toml::from_str::<RunConfig>(t).map_err(|e| anyhow::anyhow!("{origin}: {e}"))?;
            t.parse::<Table>().with_context(|| origin.to_string())?
        }
        None => Table::new(),
    };
    let env_table = env_overrides(env)?;
    let preset_name = env_table
        .get("preset")
        .or_else(|| file.get("preset"))
        .and_then(Value::as_str)
        .map(str::to_string);
    let mut merged = match &preset_name {
        Some(p) => preset(p)?,
        None => Table::new(),
    };
    merge(&mut merged, file);
    merge(&mut merged, env_table);
    let cfg: RunConfig = Value::Table(merged).try_into().map_err(|e| anyhow::anyhow!("{origin} with PHC_ overrides: {e}"))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario()?;
        self.grid()?;
        let c = &self.cascade;
        if c.l == 0 || c.l >= c.order {
            bail!("cascade.l / cascade.order: need 0 < l < N, got l={} N={}", c.l, c.order);
        }
        if c.nu < 0.0 || c.nu_base < 0.0 {
            bail!("cascade.nu / cascade.nu_base: must be nonnegative");
        }
        if c.snapshot_every == 0 {
            bail!("cascade.snapshot_every: must be positive");
        }
        if !["zero", "transverse", "random"].contains(&c.data.as_str()) {
            bail!("cascade.data: unknown datum `{}` (zero | transverse | random)", c.data);
        }
        let eps = self.sweep.values();
        if eps.is_empty() {
            bail!("sweep: empty epsilon sweep");
        }
        if eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            bail!("sweep.eps: every epsilon must lie in (0, 1]");
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            bail!("sweep.eps: must be strictly decreasing");
        }
        if !["taylor-green", "random", "shear", "shear-layer"].contains(&self.direct.datum.as_str()) {
            bail!("direct.datum: unknown datum `{}` (taylor-green | random | shear | shear-layer)", self.direct.datum);
        }
        if self.direct.every == 0 {
            bail!("direct.every: must be positive");
        }
        self.experiment.instability.build()?;
        Ok(())
    }

    pub fn scenario(&self) -> Result<BaseScenario> {
        self.scenario.parse::<BaseScenario>().map_err(|e| anyhow::anyhow!("scenario: {e}"))
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        Grid::new(g.dim, g.n, g.m_theta, g.dt, g.t_end).map_err(|e| anyhow::anyhow!("grid: {e}"))
    }
}
