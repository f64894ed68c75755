use super::{InitScheme, NetSpec};
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::rng::RngStream;
use crate::tensor::{ParamSet, Tensor};

pub fn init_params(spec: &NetSpec, rng: &RngStream) -> ParamSet {
    let mut params = ParamSet::new();
    for l in 0..spec.layers() {
        let (fan_in, fan_out) = (spec.widths()[l], spec.widths()[l + 1]);
        let weights = match spec.init() {
            InitScheme::FanInGaussian { gain } => {
                let std = gain / (fan_in as f64).sqrt();
                rng.child("layer", l as u64).generator().normals(fan_in * fan_out, std)
            }
            InitScheme::Zeros => vec![0.0; fan_in * fan_out],
        };
        let w = Tensor::new(vec![fan_in, fan_out], weights).expect("extents match");
        params.insert(NetSpec::weight_name(l), w).expect("unique");
        params.insert(NetSpec::bias_name(l), Tensor::zeros(&[fan_out])).expect("unique");
    }
    params
}

/// Everything backward needs: each layer's input and pre-activation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Forward pass over a `[batch, input_width]` tensor.
pub fn mlp_forward(spec: &NetSpec, params: &ParamSet, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
    spec.check_params(params)?;
    let (batch, width) = match input.shape() {
        [b, w] => (*b, *w),
        s => return Err(Error::Shape(format!("input must be [batch, width], got {s:?}"))),
    };
    if width != spec.input_width() {
        return Err(Error::Shape(format!(
            "input width {width} does not match network input {}",
            spec.input_width()
        )));
    }
    let mut cache = ForwardCache {
        batch,
        inputs: Vec::with_capacity(spec.layers()),
        pre: Vec::with_capacity(spec.layers()),
        outputs: Vec::with_capacity(spec.layers()),
    };
    let mut current = input.data().to_vec();
    for (l, act) in spec.activations().iter().enumerate() {
        let (fan_in, fan_out) = (spec.widths()[l], spec.widths()[l + 1]);
        let w = params.at(2 * l).data();
        let b = params.at(2 * l + 1).data();
        let mut z = gemm(batch, fan_in, fan_out, &current, false, w, false);
        for row in z.chunks_exact_mut(fan_out) {
            for (v, bias) in row.iter_mut().zip(b) {
                *v += bias;
            }
        }
        let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
        cache.inputs.push(std::mem::replace(&mut current, a.clone()));
        cache.pre.push(z);
        cache.outputs.push(a);
    }
    let out = Tensor::new(vec![batch, spec.output_width()], current)?;
    Ok((out, cache))
}

/// Reverse-mode gradients of the forward map given `d(output)`.
pub fn mlp_backward(
    spec: &NetSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    output_grad: &Tensor,
) -> Result<(ParamSet, Tensor)> {
    spec.check_params(params)?;
    if cache.pre.len() != spec.layers() {
        return Err(Error::Shape("cache does not belong to this network".into()));
    }
    let batch = cache.batch;
    if output_grad.shape() != [batch, spec.output_width()] {
        return Err(Error::Shape(format!(
            "output grad {:?} does not match [{batch}, {}]",
            output_grad.shape(),
            spec.output_width()
        )));
    }
    let mut grads: Vec<(String, Tensor)> = Vec::with_capacity(2 * spec.layers());
    let mut upstream = output_grad.data().to_vec();
    for l in (0..spec.layers()).rev() {
        let (fan_in, fan_out) = (spec.widths()[l], spec.widths()[l + 1]);
        if cache.pre[l].len() != batch * fan_out || cache.inputs[l].len() != batch * fan_in {
            return Err(Error::Shape(format!("cache layer {l} has the wrong size")));
        }
        let act = spec.activations()[l];
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&cache.pre[l])
            .zip(&cache.outputs[l])
            .map(|((g, &z), &a)| g * act.derivative(z, a))
            .collect();
        let dw = gemm(fan_in, batch, fan_out, &cache.inputs[l], true, &dz, false);
        let mut db = vec![0.0; fan_out];
        for row in dz.chunks_exact(fan_out) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
        upstream = gemm(batch, fan_out, fan_in, &dz, false, params.at(2 * l).data(), true);
        grads.push((NetSpec::bias_name(l), Tensor::new(vec![fan_out], db)?));
        grads.push((NetSpec::weight_name(l), Tensor::new(vec![fan_in, fan_out], dw)?));
    }
    grads.reverse();
    let input_grad = Tensor::new(vec![batch, spec.input_width()], upstream)?;
    Ok((grads.into_iter().collect(), input_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn single_layer(weights: Vec<f64>, bias: Vec<f64>, n_in: usize, n_out: usize) -> (NetSpec, ParamSet) {
        let spec = NetSpec::new(vec![n_in, n_out], vec![Activation::Identity], InitScheme::Zeros).unwrap();
        let mut p = ParamSet::new();
        p.insert(NetSpec::weight_name(0), Tensor::new(vec![n_in, n_out], weights).unwrap()).unwrap();
        p.insert(NetSpec::bias_name(0), Tensor::new(vec![n_out], bias).unwrap()).unwrap();
        (spec, p)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let (spec, p) = single_layer(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2);
        let x = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 3.0, 7.0, 0.0]).unwrap();
        let (y, _) = mlp_forward(&spec, &p, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let (spec, p) = single_layer(vec![0.0; 6], vec![0.25, -1.0], 3, 2);
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (y, _) = mlp_forward(&spec, &p, &x).unwrap();
        assert_eq!(y.data(), [0.25, -1.0, 0.25, -1.0]);
    }

    #[test]
    fn hand_computed_two_three_one_relu() {
        let spec = NetSpec::new(
            vec![2, 3, 1],
            vec![Activation::Relu, Activation::Identity],
            InitScheme::Zeros,
        )
        .unwrap();
        let mut p = ParamSet::new();
        // w0 is [in=2, out=3]
        p.insert("layer0.weight", Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.5]).unwrap())
            .unwrap();
        p.insert("layer0.bias", Tensor::new(vec![3], vec![0.1, 0.2, -0.3]).unwrap()).unwrap();
        p.insert("layer1.weight", Tensor::matrix(3, 1, vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        p.insert("layer1.bias", Tensor::scalar(0.05)).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        // hidden pre: [0.5+3+0.1, -1+0.5+0.2, 2-1-0.3] = [3.6, -0.3, 0.7]
        // relu: [3.6, 0, 0.7]; out = 3.6 - 0 + 0.35 + 0.05 = 4.0
        let (y, _) = mlp_forward(&spec, &p, &x).unwrap();
        assert!((y.data()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let (spec, p) = single_layer(vec![0.0; 4], vec![0.0; 2], 2, 2);
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(mlp_forward(&spec, &p, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let spec = NetSpec::mlp(vec![3, 4, 2], Activation::Tanh).unwrap();
        let p = init_params(&spec, &RngStream::new(1));
        let x = Tensor::matrix(2, 3, vec![0.3, -0.1, 0.9, 1.0, 2.0, -3.0]).unwrap();
        let (_, cache) = mlp_forward(&spec, &p, &x).unwrap();
        let (g, gx) = mlp_backward(&spec, &p, &cache, &Tensor::zeros(&[2, 2])).unwrap();
        assert!(g.tensors().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_analytic_grads() {
        let (spec, p) = single_layer(vec![0.3, -0.7], vec![0.0], 2, 1);
        let x = Tensor::matrix(1, 2, vec![1.5, -2.5]).unwrap();
        let (_, cache) = mlp_forward(&spec, &p, &x).unwrap();
        let (g, gx) = mlp_backward(&spec, &p, &cache, &Tensor::filled(&[1, 1], 1.0)).unwrap();
        assert_eq!(g.at(0).data(), [1.5, -2.5]);
        assert_eq!(g.at(1).data(), [1.0]);
        assert_eq!(gx.data(), [0.3, -0.7]);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = NetSpec::mlp(vec![2, 3], Activation::Relu).unwrap();
        let a = init_params(&spec, &RngStream::new(7));
        let b = init_params(&spec, &RngStream::new(7));
        assert_eq!(a, b);
        assert!(a.at(1).data().iter().all(|&v| v == 0.0));
        assert_ne!(a, init_params(&spec, &RngStream::new(8)));
    }

    #[test]
    fn init_std_follows_fan_in() {
        let spec = NetSpec::mlp(vec![100, 10_000], Activation::Identity).unwrap();
        let p = init_params(&spec, &RngStream::new(3));
        let w = p.at(0).data();
        assert_eq!(w.len(), 1_000_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.002, "std {}", var.sqrt());
    }
}
