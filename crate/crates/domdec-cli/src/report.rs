//! File outputs: run CSVs with a fixed column order, coupling/measure
//! serialization (CSV atoms plus JSON header), and the hashed manifest.

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use domdec_core::coupling::Coupling;
use domdec_core::engine::IterStats;
use domdec_core::partition::GridPartition;

/// One row of `run.csv`; optional diagnostics stay empty when disabled.
#[derive(Clone, Debug, Default, Serialize)]
pub struct DiagRow {
    pub k: usize,
    pub t: f64,
    pub phase: String,
    pub transport: f64,
    pub objective: f64,
    pub marginal_err_x: f64,
    pub marginal_err_y: f64,
    pub tv_change: f64,
    pub solver_iterations: usize,
    pub cell_marginal_error: f64,
    pub wtv: Option<f64>,
    pub wtvb: Option<f64>,
    pub w_step: Option<f64>,
    pub mass_balance: Option<f64>,
    pub momentum_density_max: Option<f64>,
}

impl DiagRow {
    pub fn from_stats(s: &IterStats) -> Self {
        DiagRow {
            k: s.k,
            t: s.t,
            phase: s.phase.to_string(),
            transport: s.transport,
            objective: s.objective,
            marginal_err_x: s.marginal_err_x,
            marginal_err_y: s.marginal_err_y,
            tv_change: s.tv_change,
            solver_iterations: s.solver_iterations,
            cell_marginal_error: s.max_cell_marginal_error,
            ..DiagRow::default()
        }
    }
}

pub const RUN_CSV_COLUMNS: &str = "k,t,phase,transport,objective,marginal_err_x,marginal_err_y,tv_change,solver_iterations,cell_marginal_error,wtv,wtvb,w_step,mass_balance,momentum_density_max";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_run_csv(path: &Path, rows: &[DiagRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(RUN_CSV_COLUMNS);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.k,
            r.t,
            r.phase,
            r.transport,
            r.objective,
            r.marginal_err_x,
            r.marginal_err_y,
            r.tv_change,
            r.solver_iterations,
            r.cell_marginal_error,
            fmt_opt(r.wtv),
            fmt_opt(r.wtvb),
            fmt_opt(r.w_step),
            fmt_opt(r.mass_balance),
            fmt_opt(r.momentum_density_max),
        ));
    }
    write_file(path, out.as_bytes())
}

/// JSON header accompanying a serialized coupling.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct CouplingHeader {
    pub n: usize,
    pub d: usize,
    pub iteration: usize,
    pub eps_n: f64,
    pub x_dim: usize,
    pub y_dim: usize,
}

/// Writes a coupling as CSV atom rows (`x..., y..., weight`) next to a
/// JSON header carrying the scale metadata.
pub fn write_coupling_csv(path: &Path, coupling: &Coupling, header: &CouplingHeader) -> Result<()> {
    let mut out = String::new();
    for axis in 0..coupling.x_dim() {
        out.push_str(&format!("x{axis},"));
    }
    for axis in 0..coupling.y_dim() {
        out.push_str(&format!("y{axis},"));
    }
    out.push_str("weight\n");
    for a in 0..coupling.n_atoms() {
        let x = coupling.x_point(a);
        for &(j, w) in coupling.row(a) {
            for c in x {
                out.push_str(&format!("{c},"));
            }
            for c in coupling.y_point(j as usize) {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!("{w}\n"));
        }
    }
    write_file(path, out.as_bytes())?;
    let header_path = path.with_extension("json");
    write_file(
        &header_path,
        serde_json::to_string_pretty(header)?.as_bytes(),
    )
}

/// Reads a coupling CSV back onto a layout: atoms are grouped by identical
/// coordinates (round-trip exact through the shortest-roundtrip float
/// format).
pub fn load_coupling_csv(path: &Path, layout: &GridPartition, y_dim: usize) -> Result<Coupling> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading coupling {}", path.display()))?;
    let d = layout.dim();
    let mut lines = text.lines();
    let _header = lines.next();
    let mut x_index: BTreeMap<Vec<u64>, u32> = BTreeMap::new();
    let mut y_index: BTreeMap<Vec<u64>, u32> = BTreeMap::new();
    let mut x_coords: Vec<f64> = Vec::new();
    let mut y_coords: Vec<f64> = Vec::new();
    let mut entries: Vec<(u32, u32, f64)> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + y_dim + 1 {
            bail!("bad coupling row: {line}");
        }
        let xs: Vec<f64> = fields[..d]
            .iter()
            .map(|f| f.parse::<f64>().context("parsing x"))
            .collect::<Result<_>>()?;
        let ys: Vec<f64> = fields[d..d + y_dim]
            .iter()
            .map(|f| f.parse::<f64>().context("parsing y"))
            .collect::<Result<_>>()?;
        let w: f64 = fields[d + y_dim].parse().context("parsing weight")?;
        let xk: Vec<u64> = xs.iter().map(|c| c.to_bits()).collect();
        let yk: Vec<u64> = ys.iter().map(|c| c.to_bits()).collect();
        let xi = *x_index.entry(xk).or_insert_with(|| {
            let id = (x_coords.len() / d) as u32;
            x_coords.extend_from_slice(&xs);
            id
        });
        let yi = *y_index.entry(yk).or_insert_with(|| {
            let id = (y_coords.len() / y_dim) as u32;
            y_coords.extend_from_slice(&ys);
            id
        });
        entries.push((xi, yi, w));
    }
    let n_atoms = x_coords.len() / d;
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_atoms];
    for (xi, yi, w) in entries {
        rows[xi as usize].push((yi, w));
    }
    for row in rows.iter_mut() {
        row.sort_unstable_by_key(|&(j, _)| j);
    }
    let cells: Vec<usize> = (0..n_atoms)
        .map(|a| {
            layout
                .basic_cell_of(&x_coords[a * d..(a + 1) * d])
                .map_err(|e| anyhow::anyhow!("atom outside the domain: {e}"))
        })
        .collect::<Result<_>>()?;
    Coupling::from_rows(
        d,
        y_dim,
        x_coords,
        cells,
        layout.basic_count(),
        y_coords,
        rows,
    )
    .map_err(|e| anyhow::anyhow!("invalid coupling file: {e}"))
}

/// Creates parent directories and writes atomically enough for our use.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub version: u32,
    pub config: &'a C,
    pub run_csv_columns: &'static str,
    pub files: Vec<ManifestEntry>,
}

/// Hashes every listed file (paths relative to `root`, sorted) and writes
/// `manifest.json`; reruns of a deterministic suite reproduce it
/// bit-exactly.
pub fn write_manifest<C: Serialize>(
    root: &Path,
    config: &C,
    mut files: Vec<PathBuf>,
) -> Result<PathBuf> {
    files.sort();
    let mut entries = Vec::with_capacity(files.len());
    for f in &files {
        let data = fs::read(f).with_context(|| format!("hashing {}", f.display()))?;
        let rel = f
            .strip_prefix(root)
            .unwrap_or(f)
            .to_string_lossy()
            .replace('\\', "/");
        entries.push(ManifestEntry {
            path: rel,
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        });
    }
    let manifest = Manifest {
        version: crate::config::CONFIG_VERSION,
        config,
        run_csv_columns: RUN_CSV_COLUMNS,
        files: entries,
    };
    let path = root.join("manifest.json");
    write_file(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}
