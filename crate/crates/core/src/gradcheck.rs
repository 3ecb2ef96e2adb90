//! Central finite-difference verification of tape adjoints.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{AdjointFault, Graph, Tape, Var};
use crate::params::ParamStore;
use crate::tensor::Real;

/// Below this magnitude the relative error is measured against the floor
/// instead, so gradients that are zero up to rounding do not count as
/// failures.
pub const REL_ERROR_FLOOR: Real = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: Real,
    pub tolerance: Real,
    /// Upper bound on perturbed elements per tensor; larger tensors are
    /// sampled at evenly spaced indices including both ends.
    pub max_elements: usize,
    pub fault: Option<AdjointFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_elements: usize::MAX,
            fault: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: Real) -> Self {
        GradCheckOptions {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub label: String,
    pub tolerance: Real,
    pub blocks: Vec<BlockReport>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> Real {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, Real::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_rel_error < self.tolerance))
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {} max_rel={:.3e} tol={:.0e}",
            self.label,
            self.max_rel_error(),
            self.tolerance
        )?;
        for b in self.failures() {
            write!(f, "\n    {} max_rel={:.3e} ({} elems)", b.name, b.max_rel_error, b.checked)?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: Real, numeric: Real) -> Real {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn sample_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    if max <= 1 {
        return vec![0];
    }
    let mut idx: Vec<usize> = (0..max).map(|i| i * (len - 1) / (max - 1)).collect();
    idx.dedup();
    idx
}

/// Compares tape adjoints of every tensor in `inputs` against central
/// differences of the scalar returned by `build`.
///
/// `build` must read all checked tensors through [`Graph::param`].
pub fn gradcheck<F>(label: &str, inputs: &ParamStore, build: F, opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = match opts.fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let loss = build(&mut tape, inputs)?;
    let grads = tape.backward(loss)?;

    let eval = |store: &ParamStore| -> Result<Real> {
        let mut t = Tape::new();
        let l = build(&mut t, store)?;
        t.value(&l).item()
    };

    let mut work = inputs.clone();
    let mut blocks = Vec::new();
    let names: Vec<String> = inputs.names().map(str::to_string).collect();
    for name in names {
        let analytic = grads
            .get(&name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?
            .clone();
        let len = analytic.len();
        let mut worst: Real = 0.0;
        let idx = sample_indices(len, opts.max_elements);
        for &i in &idx {
            let orig = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + opts.step;
            let plus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - opts.step;
            let minus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let rel = relative_error(analytic.data()[i], numeric);
            if !(rel <= worst) {
                worst = rel;
            }
        }
        blocks.push(BlockReport {
            name,
            checked: idx.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradReport {
        label: label.to_string(),
        tolerance: opts.tolerance,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Padding;
    use crate::tensor::Tensor;

    fn conv_fixture() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_fn([1, 2, 5, 5], |[_, c, y, x]| ((c * 25 + y * 5 + x) as Real * 0.37).sin()));
        s.insert("w", Tensor::from_fn([3, 2, 3, 3], |[o, c, y, x]| ((o * 18 + c * 9 + y * 3 + x) as Real * 0.71).cos()));
        s.insert("b", Tensor::from_fn([1, 3, 1, 1], |[_, c, _, _]| c as Real * 0.1));
        s
    }

    fn conv_loss(t: &mut Tape, s: &ParamStore) -> Result<Var> {
        let x = t.param(s, "x")?;
        let w = t.param(s, "w")?;
        let b = t.param(s, "b")?;
        let y = t.conv2d(&x, &w, Some(&b), 1, Padding::Same)?;
        let r = Tensor::from_fn(t.shape(&y), |[_, c, y, x]| ((c * 7 + y * 3 + x) as Real * 0.3).sin());
        t.dot(&y, &r)
    }

    #[test]
    fn single_conv_passes_tight_tolerance() {
        let rep = gradcheck("conv2d", &conv_fixture(), conv_loss, &GradCheckOptions::with_tolerance(1e-6)).unwrap();
        assert!(rep.passed(), "{rep}");
    }

    #[test]
    fn corrupted_adjoint_is_reported() {
        let opts = GradCheckOptions {
            fault: Some(AdjointFault::ScaleConvWeight(1.01)),
            ..GradCheckOptions::default()
        };
        let rep = gradcheck("conv2d", &conv_fixture(), conv_loss, &opts).unwrap();
        assert!(!rep.passed());
        let failed: Vec<&str> = rep.failures().map(|b| b.name.as_str()).collect();
        assert_eq!(failed, vec!["w"]);
        assert!(rep.to_string().starts_with("FAIL"));
    }

    #[test]
    fn sampling_keeps_both_ends() {
        assert_eq!(sample_indices(5, 10), vec![0, 1, 2, 3, 4]);
        let s = sample_indices(100, 4);
        assert_eq!(s, vec![0, 33, 66, 99]);
    }
}
