//! Run outputs: self-describing binary snapshots (magic "SGDF1"), the CSV
//! ledger time series with a fixed documented column order, and grayscale
//! PGM slice images with a sidecar recording the scaling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::{ConservationReport, EnergyLedger};
use crate::error::SimError;
use crate::grid::{Grid, ScalarField};
use crate::integrator::SimState;

const MAGIC: &[u8; 5] = b"SGDF1";

/// In-memory form of a snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim: u8,
    pub cells: [u32; 3],
    pub lengths: [f64; 3],
    pub t: f64,
    pub step: u64,
    pub species: u8,
    /// (name, per-component data blocks in grid index order)
    pub fields: Vec<(String, Vec<Vec<f64>>)>,
}

impl Snapshot {
    /// Capture ρ, v, ξ, J, c, μ, V (restricted to the box), p.
    pub fn capture(grid: &Grid, state: &SimState) -> Snapshot {
        let d = grid.dim();
        let mut fields: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        let scalar = |f: &ScalarField| vec![f.as_slice().to_vec()];
        fields.push(("rho".into(), scalar(&state.rho)));
        fields.push((
            "v".into(),
            (0..d).map(|a| state.v.comp(a).as_slice().to_vec()).collect(),
        ));
        fields.push((
            "xi".into(),
            (0..d)
                .map(|a| state.kin.xi.comp(a).as_slice().to_vec())
                .collect(),
        ));
        fields.push(("J".into(), scalar(&state.kin.jac)));
        let mut species = 0u8;
        if let Some(sp) = &state.species {
            species = sp.c.len() as u8;
            fields.push((
                "c".into(),
                sp.c.iter().map(|f| f.as_slice().to_vec()).collect(),
            ));
            fields.push((
                "mu".into(),
                sp.mu.iter().map(|f| f.as_slice().to_vec()).collect(),
            ));
        }
        if let Some(pot) = &state.potential {
            fields.push(("V".into(), scalar(&pot.restrict(grid))));
        }
        fields.push(("p".into(), scalar(&state.pressure)));
        let n = grid.cells();
        Snapshot {
            dim: d as u8,
            cells: [n[0] as u32, n[1] as u32, n[2] as u32],
            lengths: grid.lengths(),
            t: state.t,
            step: state.step,
            species,
            fields,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), SimError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&[1u8])?; // little-endian payload
        w.write_all(&[self.dim])?;
        for c in self.cells {
            w.write_all(&c.to_le_bytes())?;
        }
        for l in self.lengths {
            w.write_all(&l.to_le_bytes())?;
        }
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&[self.species])?;
        w.write_all(&[self.fields.len() as u8])?;
        for (name, comps) in &self.fields {
            let bytes = name.as_bytes();
            w.write_all(&[bytes.len() as u8])?;
            w.write_all(bytes)?;
            w.write_all(&(comps.len() as u32).to_le_bytes())?;
            for comp in comps {
                for v in comp {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Snapshot, SimError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SimError::Snapshot("bad magic bytes".into()));
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        if b1[0] != 1 {
            return Err(SimError::Snapshot("unsupported endianness tag".into()));
        }
        r.read_exact(&mut b1)?;
        let dim = b1[0];
        let mut cells = [0u32; 3];
        for c in cells.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *c = u32::from_le_bytes(b);
        }
        let mut lengths = [0f64; 3];
        for l in lengths.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *l = f64::from_le_bytes(b);
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let t = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let step = u64::from_le_bytes(b8);
        r.read_exact(&mut b1)?;
        let species = b1[0];
        r.read_exact(&mut b1)?;
        let field_count = b1[0] as usize;
        let cell_total = (cells[0] as usize) * (cells[1] as usize) * (cells[2] as usize);
        let mut fields = Vec::with_capacity(field_count);
        for _ in 0..field_count {
            r.read_exact(&mut b1)?;
            let mut name_bytes = vec![0u8; b1[0] as usize];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| SimError::Snapshot("field name is not utf-8".into()))?;
            let mut b4 = [0u8; 4];
            r.read_exact(&mut b4)?;
            let comps = u32::from_le_bytes(b4) as usize;
            let mut data = Vec::with_capacity(comps);
            for _ in 0..comps {
                let mut comp = vec![0f64; cell_total];
                for v in comp.iter_mut() {
                    r.read_exact(&mut b8)?;
                    *v = f64::from_le_bytes(b8);
                }
                data.push(comp);
            }
            fields.push((name, data));
        }
        Ok(Snapshot {
            dim,
            cells,
            lengths,
            t,
            step,
            species,
            fields,
        })
    }
}

/// CSV ledger writer. Column order (fixed):
/// step,t,dt,kinetic,stored,coupling,field_energy,ext_coupling,grav_energy,
/// viscous_rate,diffusive_rate,reactive_rate,ext_power,penalty_energy,
/// residual_w,residual_rel,total_mass,c_total_0..,sum_violation,
/// neg_violation,min_j,clamp_count,consistency_residual
pub struct LedgerCsv {
    w: BufWriter<File>,
    species: usize,
    wrote_header: bool,
}

impl LedgerCsv {
    pub fn create(path: &Path, species: usize) -> Result<Self, SimError> {
        Ok(LedgerCsv {
            w: BufWriter::new(File::create(path)?),
            species,
            wrote_header: false,
        })
    }

    pub fn write_row(
        &mut self,
        ledger: &EnergyLedger,
        residual: (f64, f64),
        report: &ConservationReport,
    ) -> Result<(), SimError> {
        if !self.wrote_header {
            let mut header = String::from(
                "step,t,dt,kinetic,stored,coupling,field_energy,ext_coupling,grav_energy,viscous_rate,diffusive_rate,reactive_rate,ext_power,penalty_energy,residual_w,residual_rel,total_mass",
            );
            for i in 0..self.species {
                header.push_str(&format!(",c_total_{i}"));
            }
            header.push_str(",sum_violation,neg_violation,min_j,clamp_count,consistency_residual");
            writeln!(self.w, "{header}")?;
            self.wrote_header = true;
        }
        let mut row = format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            ledger.step,
            ledger.t,
            ledger.dt,
            ledger.kinetic,
            ledger.stored,
            ledger.coupling,
            ledger.field_energy,
            ledger.ext_coupling,
            ledger.grav_energy,
            ledger.viscous_rate,
            ledger.diffusive_rate,
            ledger.reactive_rate,
            ledger.ext_power,
            ledger.penalty_energy,
            residual.0,
            residual.1,
            report.total_mass,
        );
        for i in 0..self.species {
            let v = report.species_totals.get(i).copied().unwrap_or(0.0);
            row.push_str(&format!(",{v:?}"));
        }
        row.push_str(&format!(
            ",{:?},{:?},{:?},{},{:?}",
            report.sum_violation,
            report.neg_violation,
            report.min_j,
            report.clamp_count,
            report.consistency_residual
        ));
        writeln!(self.w, "{row}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), SimError> {
        self.w.flush()?;
        Ok(())
    }
}

/// Write a grayscale PGM (P5, maxval 255) of the mid-z slice of a field,
/// min-max scaled, plus a sidecar text file recording the scale.
pub fn write_pgm_slice(
    grid: &Grid,
    field: &ScalarField,
    path: &Path,
) -> Result<(), SimError> {
    let n = grid.cells();
    let kz = n[2] / 2;
    let (lo, hi) = {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n[0] {
            for j in 0..n[1] {
                let v = field.as_slice()[grid.index([i, j, kz])];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut w = BufWriter::new(File::create(path)?);
    // Rows top-to-bottom are decreasing y so images read naturally.
    writeln!(w, "P5")?;
    writeln!(w, "{} {}", n[0], n[1])?;
    writeln!(w, "255")?;
    for j in (0..n[1]).rev() {
        for i in 0..n[0] {
            let v = field.as_slice()[grid.index([i, j, kz])];
            let g = (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8;
            w.write_all(&[g])?;
        }
    }
    w.flush()?;
    let sidecar: PathBuf = path.with_extension("pgm.txt");
    let mut s = File::create(sidecar)?;
    writeln!(s, "min = {lo:?}")?;
    writeln!(s, "max = {hi:?}")?;
    writeln!(s, "slice_z_index = {kz}")?;
    Ok(())
}
