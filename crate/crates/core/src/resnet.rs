//! Residual networks `z_{l+1} = z_l + (1/L) U_l relu(W_l z_l)` with readout
//! `alpha . z_L`, their weighted path norm and the constructions that
//! combine them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, tagged_seed};
use crate::sampling::{augment, relu, sample_inputs, Dataset, Predictor};
use crate::two_layer::{fit_residual_net, reference_lambda, InterpolationOptions, ResidualFit, TwoLayerNet};

#[derive(Debug, Clone, PartialEq)]
pub struct ResLayer {
    /// `D x m`.
    pub u: DMatrix<f64>,
    /// `m x D`.
    pub w: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResNet {
    pub layers: Vec<ResLayer>,
    pub alpha: DVector<f64>,
    /// `D x (d+1)` input injection; the top-block identity unless built by addition.
    pub injection: DMatrix<f64>,
}

/// `D x (d+1)` matrix with the identity in its top block.
pub fn top_block_injection(width: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(width, d + 1, |i, j| if i == j { 1.0 } else { 0.0 })
}

impl ResNet {
    pub fn new(layers: Vec<ResLayer>, alpha: DVector<f64>, injection: DMatrix<f64>) -> Result<Self> {
        let width = alpha.len();
        if layers.is_empty() {
            return Err(Error::invalid("a residual network needs at least one layer"));
        }
        if injection.nrows() != width {
            return Err(Error::DimensionMismatch {
                context: "injection rows",
                expected: width,
                got: injection.nrows(),
            });
        }
        if injection.ncols() < 2 || width < injection.ncols() {
            return Err(Error::invalid(format!(
                "width {width} must be at least d + 1 = {} with d >= 1",
                injection.ncols()
            )));
        }
        let m = layers[0].u.ncols();
        for layer in &layers {
            if layer.u.shape() != (width, m) || layer.w.shape() != (m, width) {
                return Err(Error::invalid(format!(
                    "layer shapes must be U: {width}x{m} and W: {m}x{width}, got U: {:?} and W: {:?}",
                    layer.u.shape(),
                    layer.w.shape()
                )));
            }
        }
        Ok(Self {
            layers,
            alpha,
            injection,
        })
    }

    /// Net with the standard top-block injection.
    pub fn with_standard_injection(d: usize, layers: Vec<ResLayer>, alpha: DVector<f64>) -> Result<Self> {
        let width = alpha.len();
        if width < d + 1 {
            return Err(Error::invalid(format!("width {width} must be at least d + 1 = {}", d + 1)));
        }
        Self::new(layers, alpha, top_block_injection(width, d))
    }

    /// Depth `L`, all layers zero.
    pub fn zeros(d: usize, depth: usize, width: usize, inner: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|_| ResLayer {
                u: DMatrix::zeros(width, inner),
                w: DMatrix::zeros(inner, width),
            })
            .collect();
        Self::with_standard_injection(d, layers, DVector::zeros(width))
    }

    /// Entries of `U`, `W` uniform in `[-scale, scale]`, `alpha` uniform in `[-1, 1]`.
    pub fn random(d: usize, depth: usize, width: usize, inner: usize, scale: f64, seed: u64) -> Result<Self> {
        if depth == 0 || inner == 0 {
            return Err(Error::invalid("depth and inner width must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut uniform = |s: f64| rng.random_range(-s..=s);
        let layers = (0..depth)
            .map(|_| ResLayer {
                u: DMatrix::from_fn(width, inner, |_, _| uniform(scale)),
                w: DMatrix::from_fn(inner, width, |_, _| uniform(scale)),
            })
            .collect();
        let alpha = DVector::from_fn(width, |_, _| uniform(1.0));
        Self::with_standard_injection(d, layers, alpha)
    }

    pub fn dim(&self) -> usize {
        self.injection.ncols() - 1
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.alpha.len()
    }

    pub fn inner_width(&self) -> usize {
        self.layers[0].u.ncols()
    }

    /// `|alpha|^T prod_l (I + (3/L) |U_l| |W_l|) |V| 1`, with layer 1 applied first.
    pub fn weighted_path_norm(&self) -> f64 {
        let weight = 3.0 / self.depth() as f64;
        let mut v = self.injection.abs() * DVector::from_element(self.dim() + 1, 1.0);
        for layer in &self.layers {
            let h = layer.w.abs() * &v;
            v += layer.u.abs() * h * weight;
        }
        self.alpha.abs().dot(&v)
    }

    /// Same function and norm at depth `new_depth`: retained `U_l` are scaled
    /// by `new_depth / L` and zero layers are appended.
    pub fn pad_identity_layers(&self, new_depth: usize) -> Result<Self> {
        let depth = self.depth();
        if new_depth < depth {
            return Err(Error::invalid(format!(
                "cannot pad depth {depth} down to {new_depth}"
            )));
        }
        if new_depth == depth {
            return Ok(self.clone());
        }
        let ratio = new_depth as f64 / depth as f64;
        let (width, inner) = (self.width(), self.inner_width());
        let mut layers: Vec<ResLayer> = self
            .layers
            .iter()
            .map(|l| ResLayer {
                u: &l.u * ratio,
                w: l.w.clone(),
            })
            .collect();
        layers.resize(
            new_depth,
            ResLayer {
                u: DMatrix::zeros(width, inner),
                w: DMatrix::zeros(inner, width),
            },
        );
        Self::new(layers, self.alpha.clone(), self.injection.clone())
    }

    /// Keeps the first `keep` layers and zeroes the others, at unchanged depth.
    pub fn truncated(&self, keep: usize) -> Self {
        let mut out = self.clone();
        for layer in out.layers.iter_mut().skip(keep) {
            layer.u.fill(0.0);
            layer.w.fill(0.0);
        }
        out
    }

    /// Readout divided by the weighted path norm when it exceeds one, which
    /// bounds outputs by one on the unit cube.
    pub fn normalized(&self) -> Self {
        let norm = self.weighted_path_norm();
        let mut out = self.clone();
        if norm > 1.0 {
            out.alpha /= norm;
        }
        out
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "residual network input",
                expected: self.dim(),
                got: rows,
            });
        }
        Ok(())
    }
}

impl Predictor for ResNet {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let x_aug = DVector::from_iterator(x.len() + 1, x.iter().copied().chain(std::iter::once(1.0)));
        let scale = 1.0 / self.depth() as f64;
        let mut z = &self.injection * x_aug;
        for layer in &self.layers {
            let mut h = &layer.w * &z;
            h.apply(|v| *v = relu(*v));
            z += &layer.u * h * scale;
        }
        self.alpha.dot(&z)
    }

    fn predict_columns(&self, xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_input(xs.nrows())?;
        let scale = 1.0 / self.depth() as f64;
        let mut z = &self.injection * augment(xs);
        for layer in &self.layers {
            let mut h = &layer.w * &z;
            h.apply(|v| *v = relu(*v));
            z += &layer.u * h * scale;
        }
        Ok(z.tr_mul(&self.alpha))
    }
}

pub fn resnet_eval(net: &ResNet, x: &[f64]) -> Result<f64> {
    net.predict(x)
}

pub fn weighted_path_norm(net: &ResNet) -> f64 {
    net.weighted_path_norm()
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

/// Net computing `first(x) + second(x)` with weighted path norm equal to the
/// sum of the two: the shallower net is padded, layers are stacked block
/// diagonally and the injections and readouts are concatenated.
pub fn resnet_add(first: &ResNet, second: &ResNet) -> Result<ResNet> {
    if first.dim() != second.dim() {
        return Err(Error::invalid(format!(
            "cannot add nets with input dimensions {} and {}",
            first.dim(),
            second.dim()
        )));
    }
    let depth = first.depth().max(second.depth());
    let a = first.pad_identity_layers(depth)?;
    let b = second.pad_identity_layers(depth)?;
    let layers = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(la, lb)| ResLayer {
            u: block_diag(&la.u, &lb.u),
            w: block_diag(&la.w, &lb.w),
        })
        .collect();
    let mut injection = DMatrix::zeros(a.width() + b.width(), a.dim() + 1);
    injection.rows_mut(0, a.width()).copy_from(&a.injection);
    injection.rows_mut(a.width(), b.width()).copy_from(&b.injection);
    let alpha = DVector::from_iterator(
        a.width() + b.width(),
        a.alpha.iter().chain(b.alpha.iter()).copied(),
    );
    ResNet::new(layers, alpha, injection)
}

/// Depth-`m`, width-`(d+2)`, inner-width-1 residual network equal to the
/// two-layer net: layer `j` adds neuron `j` into the last coordinate, which
/// the readout returns. Its weighted path norm is three times the path norm.
pub fn embed_two_layer(net: &TwoLayerNet) -> ResNet {
    let d = net.dim();
    let width = d + 2;
    let layers = (0..net.width())
        .map(|j| {
            let mut u = DMatrix::zeros(width, 1);
            u[(d + 1, 0)] = net.outer[j];
            let mut w = DMatrix::zeros(1, width);
            w.view_mut((0, 0), (1, d + 1))
                .copy_from(&net.inner.column(j).transpose());
            ResLayer { u, w }
        })
        .collect();
    let mut alpha = DVector::zeros(width);
    alpha[d + 1] = 1.0;
    ResNet::new(layers, alpha, top_block_injection(width, d)).expect("embedding shapes are consistent")
}

/// Composite interpolant and the norms of its two parts.
#[derive(Debug, Clone)]
pub struct ResNetInterpolation {
    pub net: ResNet,
    /// Weighted path norm of the approximating part.
    pub first_norm: f64,
    pub residual: ResidualFit,
    pub lambda_ref: f64,
    pub interp_error: f64,
}

impl ResNetInterpolation {
    pub fn norm(&self) -> f64 {
        self.net.weighted_path_norm()
    }

    /// `||first||_C + 3 ||residual||_P`.
    pub fn decomposed_norm(&self) -> f64 {
        self.first_norm + 3.0 * self.residual.path_norm()
    }

    /// `||first||_C + 3 sqrt(2 / lambda) ||r||`.
    pub fn norm_bound(&self) -> f64 {
        self.first_norm + 3.0 * self.residual.norm_bound()
    }
}

/// Interpolates `data` with `first + embed(residual fit)`, where the residual
/// net of width `m2` fits what `first` leaves on the data.
pub fn interpolate_resnet_from(
    data: &Dataset,
    first: &ResNet,
    m2: usize,
    seed: u64,
    opts: &InterpolationOptions,
) -> Result<ResNetInterpolation> {
    first.check_input(data.d())?;
    let lambda_ref = match opts.lambda_target {
        Some(l) => l,
        None => reference_lambda(data, opts.quadrature_size)?,
    };
    let r = &data.y - first.predict_columns(&data.x)?;
    let residual = fit_residual_net(&data.x, &r, m2, lambda_ref, opts.max_resamples, seed, opts.rcond)?;
    let net = resnet_add(first, &embed_two_layer(&residual.net))?;
    let interp_error = (net.predict_columns(&data.x)? - &data.y).amax();
    Ok(ResNetInterpolation {
        net,
        first_norm: first.weighted_path_norm(),
        residual,
        lambda_ref,
        interp_error,
    })
}

/// [`interpolate_resnet_from`] with the approximating part taken as the
/// teacher with every layer after the first `keep` zeroed.
pub fn interpolate_resnet(
    data: &Dataset,
    teacher: &ResNet,
    keep: usize,
    m2: usize,
    seed: u64,
    opts: &InterpolationOptions,
) -> Result<ResNetInterpolation> {
    interpolate_resnet_from(data, &teacher.truncated(keep), m2, seed, opts)
}

/// `C max((m^4 D^6 c0^2 B^2)^6, (96 n m^2 / lambda)^{3/2}, n (1 + D) / lambda,
/// n^2 ln(2n) / lambda^2)`, the depth that guarantees the residual-network
/// interpolation result. `c0` and `barron_d1` are opaque positive inputs.
pub fn depth_requirement(
    n: usize,
    m: usize,
    width: usize,
    lambda: f64,
    c0: f64,
    barron_d1: f64,
    c_universal: f64,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if n == 0 || m == 0 || width == 0 || !(c0 > 0.0) || !(barron_d1 > 0.0) || !(c_universal > 0.0) {
        return Err(Error::invalid("depth requirement inputs must be positive"));
    }
    let (nf, mf, df) = (n as f64, m as f64, width as f64);
    let terms = [
        (mf.powi(4) * df.powi(6) * c0 * c0 * barron_d1 * barron_d1).powi(6),
        (96.0 * nf * mf * mf / lambda).powf(1.5),
        nf * (1.0 + df) / lambda,
        nf * nf * (2.0 * nf).ln() / (lambda * lambda),
    ];
    Ok(c_universal * terms.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Fixed probe inputs for [`NormAuditRow::eval_checksum`].
pub fn audit_probes(d: usize) -> DMatrix<f64> {
    sample_inputs(d, 64, tagged_seed(0, "norm-audit-probes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormAuditRow {
    pub net_id: String,
    #[serde(rename = "L")]
    pub depth: usize,
    #[serde(rename = "D")]
    pub width: usize,
    pub m: usize,
    pub weighted_path_norm: f64,
    /// Sum of outputs over [`audit_probes`].
    pub eval_checksum: f64,
}

pub fn norm_audit_row(net_id: &str, net: &ResNet) -> Result<NormAuditRow> {
    Ok(NormAuditRow {
        net_id: net_id.to_string(),
        depth: net.depth(),
        width: net.width(),
        m: net.inner_width(),
        weighted_path_norm: net.weighted_path_norm(),
        eval_checksum: net.predict_columns(&audit_probes(net.dim()))?.sum(),
    })
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    #[serde(rename = "U")]
    u: Vec<f64>,
    #[serde(rename = "W")]
    w: Vec<f64>,
}

/// Matrices are stored row-major. `V` is omitted for the standard injection.
#[derive(Serialize, Deserialize)]
struct ResNetRepr {
    d: usize,
    #[serde(rename = "L")]
    depth: usize,
    #[serde(rename = "D")]
    width: usize,
    m: usize,
    alpha: Vec<f64>,
    layers: Vec<LayerRepr>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    injection: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

impl Serialize for ResNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let standard = self.injection == top_block_injection(self.width(), self.dim());
        ResNetRepr {
            d: self.dim(),
            depth: self.depth(),
            width: self.width(),
            m: self.inner_width(),
            alpha: self.alpha.iter().copied().collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRepr {
                    u: row_major(&l.u),
                    w: row_major(&l.w),
                })
                .collect(),
            injection: (!standard).then(|| row_major(&self.injection)),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ResNet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ResNetRepr::deserialize(de)?;
        let (w, m) = (r.width, r.m);
        if r.layers.len() != r.depth || r.alpha.len() != w {
            return Err(D::Error::custom("layer count or readout length does not match L and D"));
        }
        let mut layers = Vec::with_capacity(r.depth);
        for l in r.layers {
            if l.u.len() != w * m || l.w.len() != m * w {
                return Err(D::Error::custom("layer matrix sizes do not match D and m"));
            }
            layers.push(ResLayer {
                u: DMatrix::from_row_slice(w, m, &l.u),
                w: DMatrix::from_row_slice(m, w, &l.w),
            });
        }
        let injection = match r.injection {
            Some(v) if v.len() == w * (r.d + 1) => DMatrix::from_row_slice(w, r.d + 1, &v),
            Some(_) => return Err(D::Error::custom("V must have D x (d + 1) entries")),
            None => top_block_injection(w, r.d),
        };
        ResNet::new(layers, DVector::from_vec(r.alpha), injection).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::sample_dataset;
    use approx::assert_relative_eq;

    /// The single-layer d=1 net whose weighted path norm is 6.
    fn six_norm_net() -> ResNet {
        let u = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let w = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        ResNet::with_standard_injection(1, vec![ResLayer { u, w }], DVector::from_vec(vec![0.0, 0.0, 1.0])).unwrap()
    }

    #[test]
    fn skip_only_net_is_affine() {
        let mut net = ResNet::zeros(2, 3, 4, 2).unwrap();
        net.alpha = DVector::from_vec(vec![0.5, -2.0, 0.25, 7.0]);
        let x = [0.3, -0.4];
        assert_relative_eq!(net.predict(&x).unwrap(), 0.5 * 0.3 + 2.0 * 0.4 + 0.25, epsilon = 1e-15);
        net.alpha = DVector::from_element(4, 1.0);
        assert_eq!(net.weighted_path_norm(), 3.0);
        let zero = ResNet::random(2, 3, 4, 2, 1.0, 1).unwrap();
        let zero = ResNet { alpha: DVector::zeros(4), ..zero };
        assert_eq!(zero.predict(&x).unwrap(), 0.0);
    }

    #[test]
    fn single_layer_manual_expansion() {
        let net = ResNet::random(2, 1, 4, 3, 0.8, 2).unwrap();
        let x = [0.2, -0.9];
        let mut z0 = DVector::zeros(4);
        z0[0] = 0.2;
        z0[1] = -0.9;
        z0[2] = 1.0;
        let l = &net.layers[0];
        let h = (&l.w * &z0).map(|v| v.max(0.0));
        let z1 = &z0 + &l.u * h;
        assert!((net.predict(&x).unwrap() - net.alpha.dot(&z1)).abs() <= 1e-14);
        assert!(net.predict(&x[..1]).is_err());
    }

    #[test]
    fn batch_eval_matches_pointwise() {
        let net = ResNet::random(3, 4, 6, 3, 0.7, 3).unwrap();
        let xs = sample_inputs(3, 30, 4);
        let batch = net.predict_columns(&xs).unwrap();
        for (i, c) in xs.column_iter().enumerate() {
            assert!((batch[i] - net.predict_unchecked(c.as_slice())).abs() <= 1e-13);
        }
    }

    #[test]
    fn weighted_norm_hand_example() {
        assert_relative_eq!(six_norm_net().weighted_path_norm(), 6.0, epsilon = 1e-15);
    }

    /// Materializes the full matrix product.
    fn norm_by_products(net: &ResNet) -> f64 {
        let width = net.width();
        let weight = 3.0 / net.depth() as f64;
        let mut p = DMatrix::<f64>::identity(width, width);
        for l in &net.layers {
            p = (DMatrix::identity(width, width) + l.u.abs() * l.w.abs() * weight) * p;
        }
        let ones = DVector::from_element(net.dim() + 1, 1.0);
        net.alpha.abs().dot(&(p * net.injection.abs() * ones))
    }

    #[test]
    fn weighted_norm_matches_product_oracle_under_scaling() {
        let net = ResNet::random(2, 5, 5, 3, 0.6, 5).unwrap();
        for t in [0.0, 0.5, 1.0, 2.5] {
            let mut scaled = net.clone();
            for l in &mut scaled.layers {
                l.u *= t;
            }
            let a = scaled.weighted_path_norm();
            assert!((a - norm_by_products(&scaled)).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn padding_preserves_function_and_norm() {
        let net = ResNet::random(2, 3, 4, 2, 0.9, 6).unwrap();
        assert_eq!(net.pad_identity_layers(3).unwrap(), net);
        assert!(net.pad_identity_layers(2).is_err());
        let padded = net.pad_identity_layers(7).unwrap();
        assert_eq!(padded.depth(), 7);
        let xs = sample_inputs(2, 100, 7);
        let diff = (padded.predict_columns(&xs).unwrap() - net.predict_columns(&xs).unwrap()).amax();
        assert!(diff <= 1e-12);
        assert!((padded.weighted_path_norm() - net.weighted_path_norm()).abs() <= 1e-12);
    }

    #[test]
    fn addition_is_exact() {
        let twelve = resnet_add(&six_norm_net(), &six_norm_net()).unwrap();
        assert_relative_eq!(twelve.weighted_path_norm(), 12.0, epsilon = 1e-14);

        let a = ResNet::random(3, 2, 5, 3, 0.7, 8).unwrap();
        let b = ResNet::random(3, 5, 4, 2, 0.7, 9).unwrap();
        let sum = resnet_add(&a, &b).unwrap();
        assert_eq!((sum.depth(), sum.width(), sum.inner_width()), (5, 9, 5));
        let xs = sample_inputs(3, 1000, 10);
        let lhs = sum.predict_columns(&xs).unwrap();
        let rhs = a.predict_columns(&xs).unwrap() + b.predict_columns(&xs).unwrap();
        assert!((lhs - rhs).amax() <= 1e-12);
        let norms = a.weighted_path_norm() + b.weighted_path_norm();
        assert!((sum.weighted_path_norm() - norms).abs() <= 1e-12 * norms);

        let other_dim = ResNet::random(2, 1, 3, 1, 1.0, 1).unwrap();
        assert!(resnet_add(&a, &other_dim).is_err());
    }

    #[test]
    fn embedding_single_neuron() {
        let net = TwoLayerNet::new(1, &[(1.0, vec![1.0], 1.0)]).unwrap();
        let emb = embed_two_layer(&net);
        assert_eq!((emb.depth(), emb.width(), emb.inner_width()), (1, 3, 1));
        assert_relative_eq!(emb.weighted_path_norm(), 6.0, epsilon = 1e-15);
        assert_relative_eq!(emb.predict(&[0.5]).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn embedding_random_net() {
        let mut rng = rng_from_seed(11);
        let outer = DVector::from_fn(8, |_, _| rng.random_range(-2.0..2.0));
        let inner = DMatrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0));
        let net = TwoLayerNet::from_parts(outer, inner).unwrap();
        let emb = embed_two_layer(&net);
        let xs = sample_inputs(3, 1000, 12);
        let diff = (emb.predict_columns(&xs).unwrap() - net.predict_columns(&xs).unwrap()).amax();
        assert!(diff <= 1e-12);
        assert_relative_eq!(emb.weighted_path_norm() / net.path_norm(), 3.0, epsilon = 1e-12);

        let zero = embed_two_layer(&net.scale_outer(0.0));
        assert_eq!(zero.weighted_path_norm(), 0.0);
        assert_eq!(zero.predict_columns(&xs).unwrap().amax(), 0.0);
    }

    #[test]
    fn interpolation_with_exact_first_part() {
        let teacher = ResNet::random(2, 3, 5, 2, 0.8, 13).unwrap().normalized();
        let data = sample_dataset(&teacher, 5, 14).unwrap();
        let opts = InterpolationOptions {
            lambda_target: Some(1e-4),
            ..Default::default()
        };
        let out = interpolate_resnet(&data, &teacher, 3, 256, 15, &opts).unwrap();
        assert!(out.residual.r_norm <= 1e-14);
        assert!(out.interp_error <= 1e-8);
        assert_relative_eq!(out.norm(), teacher.weighted_path_norm(), epsilon = 1e-12);

        let out = interpolate_resnet(&data, &teacher, 2, 256, 15, &opts).unwrap();
        assert!(out.interp_error <= 1e-8);
        assert!((out.norm() - out.decomposed_norm()).abs() <= 1e-9 * out.norm());
    }

    #[test]
    fn depth_requirement_values() {
        let base = depth_requirement(1, 1, 1, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(base, 96f64.powf(1.5), epsilon = 1e-9);
        assert_relative_eq!(depth_requirement(1, 1, 1, 1.0, 1.0, 1.0, 2.0).unwrap(), 2.0 * base, epsilon = 1e-9);
        let big = depth_requirement(2, 2, 3, 1e12, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(big, (16.0 * 729.0f64).powi(6), max_relative = 1e-12);
        assert!(depth_requirement(1, 1, 1, 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn json_round_trip_and_audit() {
        let a = ResNet::random(2, 2, 4, 2, 0.5, 1).unwrap();
        let back: ResNet = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
        let sum = resnet_add(&a, &a).unwrap();
        let s = serde_json::to_string(&sum).unwrap();
        assert!(s.contains("\"V\""));
        let back: ResNet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, sum);
        let row = norm_audit_row("a", &a).unwrap();
        assert_eq!((row.depth, row.width, row.m), (2, 4, 2));
    }
}
