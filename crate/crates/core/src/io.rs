//! CSV emission. Every file starts with one provenance comment line
//! (tool version, command, config hash, seed) followed by a header row;
//! multi-block files repeat a header per block. Formatting is deterministic
//! (shortest round-trip floats), so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::diagnostics::{DiagnosticsReport, ErrorTableEntry};
use crate::mc::Histogram2D;
use crate::mesh::{Mesh, StateField};

/// Run identity stamped into the provenance line of every CSV.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str, config_hash: &str, seed: Option<u64>) -> Self {
        Provenance {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
        }
    }

    fn line(&self) -> String {
        let mut s = format!(
            "# crtm v{} cmd={} config={}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_hash
        );
        if let Some(seed) = self.seed {
            write!(s, " seed={seed}").unwrap();
        }
        s
    }
}

fn write_file(path: &Path, body: String) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, body)
}

/// Bulk block `i,j,y,theta,n` (1-based indices) followed by the two wall
/// blocks `j,theta,n_plus` and `j,theta,n_minus`.
pub fn write_state_csv(
    path: &Path,
    state: &StateField,
    mesh: &Mesh,
    meta: &Provenance,
) -> io::Result<()> {
    let mut s = String::new();
    writeln!(s, "{}", meta.line()).unwrap();
    writeln!(s, "i,j,y,theta,n").unwrap();
    for i in 0..mesh.rows() {
        for j in 0..mesh.cols() {
            writeln!(
                s,
                "{},{},{},{},{}",
                i + 1,
                j + 1,
                mesh.y(i),
                mesh.theta(j),
                state.n[mesh.idx(i, j)]
            )
            .unwrap();
        }
    }
    writeln!(s, "j,theta,n_plus").unwrap();
    for (p, j) in mesh.upward_range().enumerate() {
        writeln!(s, "{},{},{}", j + 1, mesh.theta(j), state.n_plus[p]).unwrap();
    }
    writeln!(s, "j,theta,n_minus").unwrap();
    for j in mesh.downward_range() {
        writeln!(s, "{},{},{}", j + 1, mesh.theta(j), state.n_minus[j]).unwrap();
    }
    write_file(path, s)
}

/// Interior block `bin_y,bin_theta,count,density` followed by wall blocks
/// `plate,bin_theta,count,density` (plate +1 top, -1 bottom).
pub fn write_histogram_csv(path: &Path, hist: &Histogram2D, meta: &Provenance) -> io::Result<()> {
    let mut s = String::new();
    writeln!(s, "{}", meta.line()).unwrap();
    writeln!(s, "bin_y,bin_theta,count,density").unwrap();
    for iy in 0..hist.bins_y {
        for jt in 0..hist.bins_theta {
            writeln!(
                s,
                "{},{},{},{}",
                iy + 1,
                jt + 1,
                hist.counts[iy * hist.bins_theta + jt],
                hist.bulk_density(iy, jt)
            )
            .unwrap();
        }
    }
    writeln!(s, "plate,bin_theta,count,density").unwrap();
    let wall_norm = 1.0 / (hist.total as f64 * hist.dtheta());
    for (jt, &c) in hist.top.iter().enumerate() {
        writeln!(s, "1,{},{},{}", jt + 1, c, c as f64 * wall_norm).unwrap();
    }
    for (jt, &c) in hist.bottom.iter().enumerate() {
        writeln!(s, "-1,{},{},{}", jt + 1, c, c as f64 * wall_norm).unwrap();
    }
    write_file(path, s)
}

/// Diagnostics series `t,M_total,M_i,M_b,I,linf_gap`; entropy columns are
/// empty when no steady-state reference was configured.
pub fn write_report_csv(
    path: &Path,
    report: &DiagnosticsReport,
    meta: &Provenance,
) -> io::Result<()> {
    let mut s = String::new();
    writeln!(s, "{}", meta.line()).unwrap();
    writeln!(s, "t,M_total,M_i,M_b,I,linf_gap").unwrap();
    for r in &report.series {
        let entropy = r.entropy.map(|v| v.to_string()).unwrap_or_default();
        let gap = r.linf_gap.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{},{},{}", r.t, r.m_total, r.m_i, r.m_b, entropy, gap).unwrap();
    }
    write_file(path, s)
}

/// Grid-refinement error table `dy,dtheta,err2`.
pub fn write_error_table_csv(
    path: &Path,
    entries: &[ErrorTableEntry],
    meta: &Provenance,
) -> io::Result<()> {
    let mut s = String::new();
    writeln!(s, "{}", meta.line()).unwrap();
    writeln!(s, "dy,dtheta,err2").unwrap();
    for e in entries {
        writeln!(s, "{},{},{}", e.dy, e.dtheta, e.err2).unwrap();
    }
    write_file(path, s)
}

/// One asymptotic-ladder rung.
#[derive(Debug, Clone, Copy)]
pub struct LadderRung {
    pub epsilon: f64,
    pub m_i: f64,
    pub m_b: f64,
    pub ratio: f64,
    /// |ratio - previous ratio|; absent on the first rung.
    pub ratio_diff: Option<f64>,
    /// Limiting angular diffusion coefficient for this kernel.
    pub diffusion: f64,
}

/// Ladder CSV `epsilon,M_i,M_b,ratio,ratio_diff,diffusion`.
pub fn write_ladder_csv(path: &Path, rungs: &[LadderRung], meta: &Provenance) -> io::Result<()> {
    let mut s = String::new();
    writeln!(s, "{}", meta.line()).unwrap();
    writeln!(s, "epsilon,M_i,M_b,ratio,ratio_diff,diffusion").unwrap();
    for r in rungs {
        let diff = r.ratio_diff.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epsilon, r.m_i, r.m_b, r.ratio, diff, r.diffusion
        )
        .unwrap();
    }
    write_file(path, s)
}

/// MC-vs-solver comparison rows
/// `t,distance,noise_floor,ratio,wells_pde,wells_mc`.
#[derive(Debug, Clone, Copy)]
pub struct CompareRow {
    pub t: f64,
    pub distance: f64,
    pub noise_floor: f64,
    pub wells_pde: bool,
    pub wells_mc: bool,
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow], meta: &Provenance) -> io::Result<()> {
    let mut s = String::new();
    writeln!(s, "{}", meta.line()).unwrap();
    writeln!(s, "t,distance,noise_floor,ratio,wells_pde,wells_mc").unwrap();
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.t,
            r.distance,
            r.noise_floor,
            r.distance / r.noise_floor,
            r.wells_pde,
            r.wells_mc
        )
        .unwrap();
    }
    write_file(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::StateField;

    #[test]
    fn state_csv_layout_and_determinism() {
        let dir = std::env::temp_dir().join("crtm_io_test");
        let mesh = Mesh::new(2, 2, 10.0, 20.0).unwrap();
        let state = StateField::uniform(&mesh);
        let meta = Provenance::new("evolve", "deadbeef00112233", Some(7));
        let p1 = dir.join("a.csv");
        let p2 = dir.join("b.csv");
        write_state_csv(&p1, &state, &mesh, &meta).unwrap();
        write_state_csv(&p2, &state, &mesh, &meta).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        let prov = lines.next().unwrap();
        assert!(prov.starts_with("# crtm v"));
        assert!(prov.contains("cmd=evolve"));
        assert!(prov.contains("config=deadbeef00112233"));
        assert!(prov.contains("seed=7"));
        assert_eq!(lines.next().unwrap(), "i,j,y,theta,n");
        // 16 bulk rows, then the wall blocks.
        let rest: Vec<&str> = lines.collect();
        assert_eq!(rest.len(), 16 + 1 + 2 + 1 + 2);
        assert!(rest[16].starts_with("j,theta,n_plus"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
