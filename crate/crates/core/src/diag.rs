//! Time-series diagnostics rows and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// One diagnostics sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagRecord {
    pub t: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub linf_q: f64,
    /// `½‖u‖²`.
    pub kinetic: f64,
    /// `½ε²‖∇Q‖² + ε∫f_B(Q)`.
    pub free_energy: f64,
    pub max_grad_q: f64,
    /// `‖∇·u‖_{L²}`.
    pub div_u: f64,
    /// Distance functional to the limit system, when a reference is attached.
    pub y: Option<f64>,
    pub resolved: bool,
}

pub const CSV_HEADER: &str =
    "t,min_eig,max_eig,linf_q,kinetic,free_energy,max_grad_q,div_u,y,resolved";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl DiagRecord {
    pub fn energy(&self) -> f64 {
        self.kinetic + self.free_energy
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(self.t),
            fmt_f64(self.min_eig),
            fmt_f64(self.max_eig),
            fmt_f64(self.linf_q),
            fmt_f64(self.kinetic),
            fmt_f64(self.free_energy),
            fmt_f64(self.max_grad_q),
            fmt_f64(self.div_u),
            self.y.map(fmt_f64).unwrap_or_default(),
            u8::from(self.resolved)
        )
    }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[DiagRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
