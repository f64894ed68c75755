use crate::error::{Error, Result};
use crate::nn::{init_params, Activation, InitScheme, NetSpec};
use crate::rng::RngStream;
use crate::tensor::ParamSet;

use super::features::FeatureMatrix;
use super::{RULE_HIDDEN, RULE_INPUT};

/// How the tensor-magnitude factor ν(p) is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormKind {
    /// Full L2 norm of the tensor.
    #[default]
    L2,
    /// L2 norm divided by √numel.
    Rms,
}

/// Floor on ν(p); zero-initialized tensors would otherwise never move.
pub const NORM_FLOOR: f64 = 1e-6;

pub fn rule_net() -> NetSpec {
    NetSpec::new(
        vec![RULE_INPUT, RULE_HIDDEN, RULE_HIDDEN, 2],
        vec![Activation::Relu, Activation::Relu, Activation::Identity],
        InitScheme::default(),
    )
    .expect("static shape")
}

/// Hidden layers get fan-in Gaussian weights; the output layer starts at zero,
/// so an untrained rule leaves parameters where they are.
pub fn init_rule(rng: &RngStream) -> ParamSet {
    let net = rule_net();
    let mut params = init_params(&net, rng);
    let last = NetSpec::weight_name(net.layers() - 1);
    params.get_mut(&last).expect("output layer").data_mut().fill(0.0);
    params
}

pub fn tensor_scale(p: &[f64], norm: NormKind) -> f64 {
    let l2 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let v = match norm {
        NormKind::L2 => l2,
        NormKind::Rms => l2 / (p.len() as f64).sqrt(),
    };
    v.max(NORM_FLOOR)
}

/// Direction `d` and log-magnitude `m` heads for every row of `features`.
pub fn rule_heads(rule: &ParamSet, features: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    rule_net().check_params(rule)?;
    if features.data.len() != features.rows * FeatureMatrix::COLS {
        return Err(Error::Shape("feature matrix size does not match its row count".into()));
    }
    let w = RuleWeights {
        w1: rule.at(0).data(),
        b1: rule.at(1).data(),
        w2: rule.at(2).data(),
        b2: rule.at(3).data(),
        w3: rule.at(4).data(),
        b3: rule.at(5).data(),
    };
    let mut d = vec![0.0; features.rows];
    let mut m = vec![0.0; features.rows];
    heads_dispatch(&w, &features.data, &mut d, &mut m);
    Ok((d, m))
}

struct RuleWeights<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    w3: &'a [f64],
    b3: &'a [f64],
}

fn heads_dispatch(w: &RuleWeights, x: &[f64], d: &mut [f64], m: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { heads_avx2(w, x, d, m) };
        return;
    }
    heads_portable(w, x, d, m);
}

/// Same arithmetic as the portable kernel, compiled with wider vectors. No
/// fused multiply-add is used, so both paths round identically.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn heads_avx2(w: &RuleWeights, x: &[f64], d: &mut [f64], m: &mut [f64]) {
    heads_portable(w, x, d, m);
}

#[inline(always)]
fn dense_relu<const IN: usize>(input: &[f64; IN], weights: &[f64], bias: &[f64], out: &mut [f64; RULE_HIDDEN]) {
    let weights: &[[f64; RULE_HIDDEN]] = weights.as_chunks().0;
    let mut acc: [f64; RULE_HIDDEN] = bias.try_into().expect("bias width");
    for (xi, wrow) in input.iter().zip(&weights[..IN]) {
        for j in 0..RULE_HIDDEN {
            acc[j] += xi * wrow[j];
        }
    }
    for j in 0..RULE_HIDDEN {
        out[j] = acc[j].max(0.0);
    }
}

#[inline(always)]
fn heads_portable(w: &RuleWeights, x: &[f64], d: &mut [f64], m: &mut [f64]) {
    let mut input = [0.0; RULE_INPUT];
    let mut h1 = [0.0; RULE_HIDDEN];
    let mut h2 = [0.0; RULE_HIDDEN];
    for ((row, di), mi) in x.chunks_exact(RULE_INPUT).zip(d.iter_mut()).zip(m.iter_mut()) {
        input.copy_from_slice(row);
        dense_relu(&input, w.w1, w.b1, &mut h1);
        dense_relu(&h1, w.w2, w.b2, &mut h2);
        let (mut od, mut om) = (w.b3[0], w.b3[1]);
        for (h, w3) in h2.iter().zip(w.w3.chunks_exact(2)) {
            od += h * w3[0];
            om += h * w3[1];
        }
        *di = od;
        *mi = om;
    }
}

/// `λ₁·d·exp(λ₂·m)·ν(p)` for each parameter of one tensor, before scheduling.
pub fn rule_step(
    rule: &ParamSet,
    features: &FeatureMatrix,
    p: &[f64],
    lambda1: f64,
    lambda2: f64,
    norm: NormKind,
) -> Result<Vec<f64>> {
    if features.rows != p.len() {
        return Err(Error::Shape(format!("{} feature rows for {} parameters", features.rows, p.len())));
    }
    let (d, m) = rule_heads(rule, features)?;
    Ok(apply_heads(&d, &m, p, lambda1, lambda2, norm))
}

pub(crate) fn apply_heads(d: &[f64], m: &[f64], p: &[f64], lambda1: f64, lambda2: f64, norm: NormKind) -> Vec<f64> {
    let scale = tensor_scale(p, norm);
    d.iter()
        .zip(m)
        .map(|(di, mi)| lambda1 * di * (lambda2 * mi).exp() * scale)
        .collect()
}
