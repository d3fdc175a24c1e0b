//! Turning solver models into concrete API inputs.

use rand::Rng;

use crate::dsl::Rule;
use crate::eval::{check_on_input, Verdict};
use crate::solver::{Layout, Slot, SCALE};
use crate::value::{byte_size, ApiInput, ConcreteValue, DtypeKind, Tensor};

/// Resampling attempts after the first draw when a recheck fails.
pub const RESAMPLE_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConcretizeError {
    #[error("approximated rule '{0}' still fails after {RESAMPLE_ATTEMPTS} resamples")]
    Failure(String),
    #[error("tensor '{param}' needs {bytes} bytes, over the budget")]
    ByteBudgetExceeded { param: String, bytes: u64 },
    #[error("model has {got} values, layout has {want}")]
    ModelSize { got: usize, want: usize },
}

/// A rule whose lowering was approximate and must hold on the sampled input.
#[derive(Debug, Clone, Copy)]
pub struct Recheck<'a> {
    pub rule: &'a Rule,
    pub params: &'a [String],
}

fn unscale(v: i64) -> f64 {
    v as f64 / SCALE as f64
}

fn scalar(slot: &Slot, m: &[i64]) -> ConcreteValue {
    match slot {
        Slot::Int(v) => ConcreteValue::Int(m[*v]),
        Slot::Float(v) => ConcreteValue::Float(unscale(m[*v])),
        Slot::Bool(v) => ConcreteValue::Bool(m[*v] != 0),
        Slot::Dtype(v) => ConcreteValue::Dtype(m[*v] as u32),
        Slot::Str { var, domain } => ConcreteValue::Str(domain[m[*var] as usize].clone()),
        _ => ConcreteValue::None,
    }
}

fn tensor(layout: &Layout, slot: &Slot, m: &[i64], rng: &mut impl Rng, pin: bool) -> Tensor {
    let Slot::Tensor { nd, dims, dtype, lo, hi } = slot else {
        unreachable!("tensor slot")
    };
    let shape: Vec<u64> = dims[..m[*nd] as usize].iter().map(|d| m[*d] as u64).collect();
    let code = m[*dtype] as u32;
    let (lo, hi) = (unscale(m[*lo]), unscale(m[*hi]));
    let kind = layout.dtypes.kind(code).unwrap_or(DtypeKind::Float);
    if kind == DtypeKind::Complex {
        return Tensor::summary(shape, code, lo, hi);
    }
    let n = shape.iter().product::<u64>() as usize;
    let mut el: Vec<f64> = match kind {
        DtypeKind::Float if lo < hi => (0..n).map(|_| rng.gen_range(lo..=hi)).collect(),
        DtypeKind::Float => vec![lo; n],
        _ => {
            let (a, b) = (lo.ceil() as i64, hi.floor() as i64);
            (0..n).map(|_| rng.gen_range(a..=b) as f64).collect()
        }
    };
    if pin && n > 0 {
        el[0] = lo;
        el[n - 1] = hi;
    }
    Tensor {
        shape,
        dtype: code,
        lo,
        hi,
        elements: Some(el),
    }
}

fn build(layout: &Layout, m: &[i64], rng: &mut impl Rng, pin: bool) -> Result<ApiInput, ConcretizeError> {
    let mut input = ApiInput::new(&layout.api);
    for (name, slot) in &layout.params {
        let v = match slot {
            Slot::Tensor { .. } => {
                let t = tensor(layout, slot, m, rng, pin);
                let bytes = byte_size(&t, &layout.dtypes).unwrap_or(u64::MAX);
                if bytes > layout.bounds.max_tensor_bytes {
                    return Err(ConcretizeError::ByteBudgetExceeded {
                        param: name.clone(),
                        bytes,
                    });
                }
                ConcreteValue::Tensor(t)
            }
            Slot::Seq { len, items, tuple } => {
                let xs = items[..m[*len] as usize].iter().map(|s| scalar(s, m)).collect();
                if *tuple {
                    ConcreteValue::Tuple(xs)
                } else {
                    ConcreteValue::List(xs)
                }
            }
            Slot::Union { tag, arms } => scalar(&arms[m[*tag] as usize].1, m),
            s => scalar(s, m),
        };
        input.args.push((name.clone(), v));
    }
    Ok(input)
}

/// Build an input from `model`, resampling elements until every recheck holds.
pub fn concretize(
    model: &[i64],
    layout: &Layout,
    rechecks: &[Recheck],
    rng: &mut impl Rng,
) -> Result<ApiInput, ConcretizeError> {
    if model.len() != layout.vars.len() {
        return Err(ConcretizeError::ModelSize {
            got: model.len(),
            want: layout.vars.len(),
        });
    }
    let mut last = None;
    for attempt in 0..=RESAMPLE_ATTEMPTS {
        // later attempts place lo and hi in the tensor so the observed range
        // matches the model exactly
        let input = build(layout, model, rng, attempt > 0)?;
        match rechecks
            .iter()
            .find(|r| check_on_input(r.rule, r.params, &input) != Verdict::Holds)
        {
            None => return Ok(input),
            Some(r) => last = Some(crate::dsl::render_rule(r.rule)),
        }
    }
    Err(ConcretizeError::Failure(last.unwrap_or_default()))
}
