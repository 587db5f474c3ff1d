use std::fmt::Write as _;

use nalgebra::DVector;

pub const TRACE_HEADER: &str = "k,op_index,step_sq,grad_hat_norm,grad_true_norm,f_value,psnr";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    /// Ensemble index of the last degradation drawn in this iteration.
    pub op_index: usize,
    /// `‖x^k − x^{k−1}‖²`
    pub step_sq: f64,
    pub grad_hat_norm: f64,
    pub grad_true_norm: Option<f64>,
    pub f_value: Option<f64>,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// `x^0 … x^t` when requested, otherwise empty.
    pub iterates: Vec<DVector<f64>>,
    pub final_iterate: DVector<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

impl Trace {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            records: Vec::with_capacity(n),
            iterates: Vec::new(),
            final_iterate: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with [`TRACE_HEADER`]; values use round-trip exponent formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{},{},{}",
                r.k,
                r.op_index,
                r.step_sq,
                r.grad_hat_norm,
                opt(r.grad_true_norm),
                opt(r.f_value),
                opt(r.psnr)
            );
        }
        out
    }

    pub fn step_sq(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.step_sq).collect()
    }

    pub fn psnr(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.psnr).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_leaves_missing_fields_empty() {
        let t = Trace {
            records: vec![TraceRecord {
                k: 1,
                op_index: 2,
                step_sq: 0.25,
                grad_hat_norm: 1.0,
                grad_true_norm: None,
                f_value: Some(3.0),
                psnr: None,
            }],
            iterates: vec![],
            final_iterate: DVector::zeros(1),
        };
        assert_eq!(t.to_csv(), format!("{TRACE_HEADER}\n1,2,2.5e-1,1e0,,3e0,\n"));
    }
}
