//! Flow history recording and CSV export.

use std::io::{self, Write};

use crate::matcore::matrix::C64;

/// One sampled point of the flow.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub ell: f64,
    /// Diagonal of the flowing matrix.
    pub diag: Vec<C64>,
    /// Squared Frobenius norm of the off-diagonal part.
    pub offnorm_sq: f64,
    /// |I_2 off-diagonal| = |sum_{n != k} M_nk M_kn|.
    pub i2off_abs: f64,
    /// |I_n(l) - I_n(0)| for n = 1..=invariant_count.
    pub invariant_drift: Vec<f64>,
}

/// Sampled flow history. Rows include l = 0, every `trace_stride`-th
/// accepted step, and the final state.
#[derive(Debug, Clone, Default)]
pub struct FlowTrace {
    pub dim: usize,
    pub invariant_count: usize,
    pub rows: Vec<TraceRow>,
}

impl FlowTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// CSV header. Columns, in order: ell; re_d0..re_d{dim-1};
    /// im_d0..im_d{dim-1}; offnorm_sq; i2off_abs; dI2..dI{invariant_count}.
    /// In-memory rows also hold dI1; the trace of M is conserved to rounding
    /// by construction, so the export starts at the first informative order.
    pub fn header(&self) -> String {
        let mut cols = Vec::with_capacity(3 + 2 * self.dim + self.invariant_count);
        cols.push("ell".to_string());
        for i in 0..self.dim {
            cols.push(format!("re_d{i}"));
        }
        for i in 0..self.dim {
            cols.push(format!("im_d{i}"));
        }
        cols.push("offnorm_sq".to_string());
        cols.push("i2off_abs".to_string());
        for n in 2..=self.invariant_count {
            cols.push(format!("dI{n}"));
        }
        cols.join(",")
    }

    /// Write the full trace; every value in full-precision scientific
    /// notation so reruns diff cleanly.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{}", self.header())?;
        for row in &self.rows {
            let mut fields = Vec::with_capacity(3 + 2 * self.dim + self.invariant_count);
            fields.push(fmt(row.ell));
            for z in &row.diag {
                fields.push(fmt(z.re));
            }
            for z in &row.diag {
                fields.push(fmt(z.im));
            }
            fields.push(fmt(row.offnorm_sq));
            fields.push(fmt(row.i2off_abs));
            for d in row.invariant_drift.iter().skip(1) {
                fields.push(fmt(*d));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_column_order() {
        let t = FlowTrace { dim: 2, invariant_count: 3, rows: vec![] };
        assert_eq!(
            t.header(),
            "ell,re_d0,re_d1,im_d0,im_d1,offnorm_sq,i2off_abs,dI2,dI3"
        );
    }

    #[test]
    fn csv_rows_have_header_arity_and_full_precision() {
        let t = FlowTrace {
            dim: 2,
            invariant_count: 2,
            rows: vec![TraceRow {
                ell: 0.125,
                diag: vec![C64::new(1.0 / 3.0, -2.0), C64::new(0.0, 5.5)],
                offnorm_sq: 9.0,
                i2off_abs: 0.25,
                invariant_drift: vec![1e-16, 2e-12],
            }],
        };
        let s = t.to_csv_string();
        let lines: Vec<&str> = s.trim_end().split('\n').collect();
        assert_eq!(lines.len(), 2);
        let ncols = lines[0].split(',').count();
        assert_eq!(lines[1].split(',').count(), ncols);
        assert_eq!(ncols, 1 + 4 + 2 + 1);
        // 17 significant digits survive the round trip.
        let third: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(third, 1.0 / 3.0);
    }
}
