//! CSV dumps of the geometry and the codebooks.

use std::fs::File;
use std::path::Path;

use ufl_core::channel::{CommCodebook, Geometry, Position};
use ufl_core::quantizer::QuantCodebook;

use crate::{Result, SimError};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| SimError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// `kind,index,x,y,zone` rows for APs, zone centroids and clients.
pub fn write_geometry(path: &Path, g: &Geometry, clients: &[Position]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["kind", "index", "x", "y", "zone"])?;
    let groups: [(&str, &[Position]); 3] = [("ap", &g.aps), ("centroid", &g.centroids), ("client", clients)];
    for (kind, pts) in groups {
        for (i, p) in pts.iter().enumerate() {
            w.write_record([kind.to_string(), i.to_string(), p.0.to_string(), p.1.to_string(), g.zone_of(*p).to_string()])?;
        }
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

/// One row per codeword: `round,m,v0..v{Q-1}`.
pub fn write_quant_codebook(path: &Path, round: usize, cb: &QuantCodebook) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["round".to_string(), "m".to_string()];
    header.extend((0..cb.dim()).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for m in 0..cb.len() {
        let mut row = vec![round.to_string(), m.to_string()];
        row.extend(cb.codeword(m).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

/// One row per entry: `zone,m,row,re,im`.
pub fn write_comm_codebook(path: &Path, cb: &CommCodebook) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["zone", "m", "row", "re", "im"])?;
    for u in 0..cb.zones {
        for m in 0..cb.per_zone {
            let (re, im) = cb.column(cb.column_index(u, m));
            for (i, (a, b)) in re.iter().zip(im).enumerate() {
                w.write_record([u.to_string(), m.to_string(), i.to_string(), a.to_string(), b.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

/// Per-round decoder diagnostics: `round,L,L_hat,decode_failures,mean_tv_type_error`.
#[derive(Debug)]
pub struct DiagnosticsWriter {
    inner: csv::Writer<File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = writer(path)?;
        inner.write_record(["round", "L", "L_hat", "decode_failures", "mean_tv_type_error"])?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &ufl_core::orchestrator::RoundRecord) -> Result<()> {
        self.inner.write_record([
            r.round.to_string(),
            r.num_selected.to_string(),
            r.l_hat.to_string(),
            r.decode_failures.to_string(),
            r.mean_tv_type_error.to_string(),
        ])?;
        self.inner.flush().map_err(|e| SimError::io("diagnostics.csv", e))
    }
}
