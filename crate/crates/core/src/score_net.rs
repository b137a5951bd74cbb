//! Residual-MLP score network `s(z, t)` with hand-written reverse-mode
//! parameter gradients and forward-mode input JVPs.
//!
//! ```text
//! x    = [z; emb(t)]                      emb: sin/cos Fourier features
//! h_0  = silu(W_in x + b_in)
//! h_l+1 = h_l + silu(W_l h_l + b_l)       l = 0..depth
//! s    = W_out h_depth + b_out
//! ```
//!
//! All trainable parameters live in one flat vector (see [`ParamLayout`]) so
//! the optimizer, gradient clipping and serialization see a single slice.
//! Matrices are stored `[out][in]`, row-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{silu, silu_grad, Real};

pub const DEFAULT_DEPTH: usize = 6;
pub const DEFAULT_T_EMB_DIM: usize = 128;
/// Lowest and highest time-embedding frequency (cycles per unit time).
pub const T_EMB_FREQ_RANGE: (f64, f64) = (0.05, 4.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetDims {
    pub d: usize,
    pub hidden: usize,
    pub depth: usize,
    pub t_emb_dim: usize,
}

impl NetDims {
    /// `hidden = 2d`, `depth = 6`, 128 time-embedding features.
    pub fn for_input(d: usize) -> Self {
        NetDims {
            d,
            hidden: 2 * d,
            depth: DEFAULT_DEPTH,
            t_emb_dim: DEFAULT_T_EMB_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hidden == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        if self.t_emb_dim == 0 || self.t_emb_dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "time embedding dimension must be positive and even, got {}",
                self.t_emb_dim
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.d + self.t_emb_dim
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(*self)
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

/// Offsets of each tensor inside the flat parameter vector, in declaration
/// order: `w_in, b_in, (w_l, b_l) × depth, w_out, b_out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub dims: NetDims,
    pub w_in: usize,
    pub b_in: usize,
    pub blocks: Vec<(usize, usize)>,
    pub w_out: usize,
    pub b_out: usize,
    pub len: usize,
}

impl ParamLayout {
    fn new(dims: NetDims) -> Self {
        let (d, h) = (dims.d, dims.hidden);
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let w_in = take(h * dims.input_width());
        let b_in = take(h);
        let blocks = (0..dims.depth).map(|_| (take(h * h), take(h))).collect();
        let w_out = take(d * h);
        let b_out = take(d);
        ParamLayout {
            dims,
            w_in,
            b_in,
            blocks,
            w_out,
            b_out,
            len: at,
        }
    }
}

/// Log-spaced embedding frequencies for `t_emb_dim / 2` sin/cos pairs.
pub fn embedding_frequencies<T: Real>(t_emb_dim: usize) -> Vec<T> {
    let n = t_emb_dim / 2;
    let (lo, hi) = T_EMB_FREQ_RANGE;
    (0..n)
        .map(|i| {
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            T::of(lo * (hi / lo).powf(frac))
        })
        .collect()
}

/// `[sin(2π f_i t)…, cos(2π f_i t)…]`.
pub fn time_embedding<T: Real>(freqs: &[T], t: T) -> Vec<T> {
    let two_pi = T::TAU();
    let mut out = vec![T::zero(); 2 * freqs.len()];
    let (sin, cos) = out.split_at_mut(freqs.len());
    for ((s, c), &f) in sin.iter_mut().zip(cos.iter_mut()).zip(freqs) {
        let (a, b) = (two_pi * f * t).sin_cos();
        *s = a;
        *c = b;
    }
    out
}

/// Activations kept from a forward pass for JVPs and backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `[z; emb(t)]`.
    input: Vec<T>,
    /// Hidden states `h_0 ..= h_depth`, each of width `hidden`.
    states: Vec<T>,
    /// silu'(pre-activation) for the input layer and every block.
    act_grad: Vec<T>,
    pub output: Vec<T>,
}

/// A score function `s(z, t)` with Jacobian-vector products in `z`.
pub trait ScoreField<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// Writes `s(z, t)` into `out`. `dirs` holds `k` row-major directions of
    /// length `dim()`; `(∂s/∂z)·dirs[i]` is written to `jvps[i·dim..]`.
    fn eval(&self, z: &[T], t: T, out: &mut [T], dirs: &[T], jvps: &mut [T]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet<T> {
    dims: NetDims,
    params: Vec<T>,
    freqs: Vec<T>,
}

impl<T: Real> ScoreNet<T> {
    pub fn zeros(dims: NetDims) -> Result<Self> {
        dims.validate()?;
        Ok(ScoreNet {
            dims,
            params: vec![T::zero(); dims.param_count()],
            freqs: embedding_frequencies(dims.t_emb_dim),
        })
    }

    /// Fan-in uniform init `U(±1/√fan_in)` for the input and block weights;
    /// zero biases and a zero output layer, so the initial score is 0.
    pub fn init(dims: NetDims, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let layout = dims.layout();
        let h = dims.hidden;
        let mut fill = |params: &mut [T], start: usize, len: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[start..start + len] {
                *p = T::of(rng.random_range(-bound..bound));
            }
        };
        fill(
            &mut net.params,
            layout.w_in,
            h * dims.input_width(),
            dims.input_width(),
        );
        for &(w, _) in &layout.blocks {
            fill(&mut net.params, w, h * h, h);
        }
        Ok(net)
    }

    /// Rebuilds a network from a flat parameter vector and its frequencies.
    pub fn from_parts(dims: NetDims, params: Vec<T>, freqs: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if params.len() != dims.param_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: dims.param_count(),
                found: params.len(),
            });
        }
        if freqs.len() != dims.t_emb_dim / 2 {
            return Err(Error::DimensionMismatch {
                what: "embedding frequencies",
                expected: dims.t_emb_dim / 2,
                found: freqs.len(),
            });
        }
        if params.iter().chain(&freqs).any(|p| !p.is_finite()) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        Ok(ScoreNet { dims, params, freqs })
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn freqs(&self) -> &[T] {
        &self.freqs
    }

    pub fn layout(&self) -> ParamLayout {
        self.dims.layout()
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> ScoreNet<U> {
        ScoreNet {
            dims: self.dims,
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
            freqs: self.freqs.iter().map(|p| U::of(p.as_f64())).collect(),
        }
    }

    fn check_inputs(&self, z: &[T], t: T, extra: Option<(&'static str, &[T])>) -> Result<()> {
        if z.len() != self.dims.d {
            return Err(Error::DimensionMismatch {
                what: "score-net input",
                expected: self.dims.d,
                found: z.len(),
            });
        }
        if let Some((what, v)) = extra {
            if v.len() != self.dims.d {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: self.dims.d,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{what} must be finite")));
            }
        }
        if let Some(j) = z.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: 0, col: j });
        }
        if !(t.is_finite() && t > T::zero()) {
            return Err(Error::invalid(format!(
                "diffusion time must be in (0, T], got {t}"
            )));
        }
        Ok(())
    }

    /// Runs the network and keeps what the backward and tangent passes need.
    pub fn forward_cached(&self, z: &[T], t: T) -> ForwardCache<T> {
        let NetDims {
            d, hidden: h, depth, ..
        } = self.dims;
        let lay = self.layout();
        let p = &self.params;
        let width = self.dims.input_width();

        let mut input = Vec::with_capacity(width);
        input.extend_from_slice(z);
        input.extend(time_embedding(&self.freqs, t));

        let mut states = vec![T::zero(); (depth + 1) * h];
        let mut act_grad = vec![T::zero(); (depth + 1) * h];
        for r in 0..h {
            let w = &p[lay.w_in + r * width..lay.w_in + (r + 1) * width];
            let a = dot(w, &input) + p[lay.b_in + r];
            states[r] = silu(a);
            act_grad[r] = silu_grad(a);
        }
        for (l, &(wo, bo)) in lay.blocks.iter().enumerate() {
            let (prev, next) = states.split_at_mut((l + 1) * h);
            let hin = &prev[l * h..];
            for r in 0..h {
                let a = dot(&p[wo + r * h..wo + (r + 1) * h], hin) + p[bo + r];
                next[r] = hin[r] + silu(a);
                act_grad[(l + 1) * h + r] = silu_grad(a);
            }
        }
        let last = &states[depth * h..];
        let output = (0..d)
            .map(|i| dot(&p[lay.w_out + i * h..lay.w_out + (i + 1) * h], last) + p[lay.b_out + i])
            .collect();
        ForwardCache {
            input,
            states,
            act_grad,
            output,
        }
    }

    /// `(∂s/∂z)·v` at the point cached in `cache`.
    pub fn jvp_cached(&self, cache: &ForwardCache<T>, v: &[T], out: &mut [T]) {
        let NetDims { d, hidden: h, .. } = self.dims;
        let lay = self.layout();
        let p = &self.params;
        let width = self.dims.input_width();
        let mut dh = vec![T::zero(); h];
        let mut da = vec![T::zero(); h];
        for r in 0..h {
            let w = &p[lay.w_in + r * width..lay.w_in + r * width + d];
            dh[r] = cache.act_grad[r] * dot(w, v);
        }
        for (l, &(wo, _)) in lay.blocks.iter().enumerate() {
            for r in 0..h {
                da[r] = dot(&p[wo + r * h..wo + (r + 1) * h], &dh);
            }
            let g = &cache.act_grad[(l + 1) * h..(l + 2) * h];
            for r in 0..h {
                dh[r] += g[r] * da[r];
            }
        }
        for (i, o) in out.iter_mut().enumerate().take(d) {
            *o = dot(&p[lay.w_out + i * h..lay.w_out + (i + 1) * h], &dh);
        }
    }

    /// Adds `∂⟨upstream, s(z,t)⟩/∂θ` (for the cached point) into `grad`.
    pub fn accumulate_param_grad(&self, cache: &ForwardCache<T>, upstream: &[T], grad: &mut [T]) {
        let NetDims {
            d, hidden: h, depth, ..
        } = self.dims;
        let lay = self.layout();
        let p = &self.params;
        let width = self.dims.input_width();

        let last = &cache.states[depth * h..];
        let mut dh = vec![T::zero(); h];
        for i in 0..d {
            let u = upstream[i];
            grad[lay.b_out + i] += u;
            let row = lay.w_out + i * h;
            for r in 0..h {
                grad[row + r] += u * last[r];
                dh[r] += p[row + r] * u;
            }
        }
        let mut da = vec![T::zero(); h];
        for (l, &(wo, bo)) in lay.blocks.iter().enumerate().rev() {
            let hin = &cache.states[l * h..(l + 1) * h];
            let g = &cache.act_grad[(l + 1) * h..(l + 2) * h];
            for r in 0..h {
                da[r] = dh[r] * g[r];
            }
            for r in 0..h {
                let dar = da[r];
                grad[bo + r] += dar;
                let row = wo + r * h;
                for c in 0..h {
                    grad[row + c] += dar * hin[c];
                    dh[c] += p[row + c] * dar;
                }
            }
        }
        for r in 0..h {
            let da0 = dh[r] * cache.act_grad[r];
            grad[lay.b_in + r] += da0;
            let row = lay.w_in + r * width;
            for (gw, &x) in grad[row..row + width].iter_mut().zip(&cache.input) {
                *gw += da0 * x;
            }
        }
    }

    pub fn forward(&self, z: &[T], t: T) -> Result<Vec<T>> {
        self.check_inputs(z, t, None)?;
        Ok(self.forward_cached(z, t).output)
    }

    /// Gradient of `⟨upstream, s(z, t)⟩` with respect to every parameter,
    /// laid out like [`ScoreNet::params`].
    pub fn backward_params(&self, z: &[T], t: T, upstream: &[T]) -> Result<Vec<T>> {
        self.check_inputs(z, t, Some(("upstream gradient", upstream)))?;
        let cache = self.forward_cached(z, t);
        let mut grad = vec![T::zero(); self.params.len()];
        self.accumulate_param_grad(&cache, upstream, &mut grad);
        Ok(grad)
    }

    pub fn jvp_input(&self, z: &[T], t: T, v: &[T]) -> Result<Vec<T>> {
        self.check_inputs(z, t, Some(("tangent", v)))?;
        let cache = self.forward_cached(z, t);
        let mut out = vec![T::zero(); self.dims.d];
        self.jvp_cached(&cache, v, &mut out);
        Ok(out)
    }
}

impl<T: Real> ScoreField<T> for ScoreNet<T> {
    fn dim(&self) -> usize {
        self.dims.d
    }

    fn eval(&self, z: &[T], t: T, out: &mut [T], dirs: &[T], jvps: &mut [T]) {
        let d = self.dims.d;
        let cache = self.forward_cached(z, t);
        out.copy_from_slice(&cache.output);
        for (v, o) in dirs.chunks_exact(d).zip(jvps.chunks_exact_mut(d)) {
            self.jvp_cached(&cache, v, o);
        }
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small(d: usize, h: usize, l: usize, seed: u64) -> ScoreNet<f64> {
        let dims = NetDims {
            d,
            hidden: h,
            depth: l,
            t_emb_dim: 8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = ScoreNet::init(dims, &mut rng).unwrap();
        // give the zero-initialized output layer and biases some signal
        for p in net.params_mut().iter_mut() {
            if *p == 0.0 {
                *p = 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
        }
        net
    }

    fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ScoreNet::<f64>::zeros(NetDims::for_input(5)).unwrap();
        let out = net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0], 0.3).unwrap();
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn fresh_init_has_zero_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ScoreNet::<f64>::init(NetDims::for_input(3), &mut rng).unwrap();
        assert_eq!(net.forward(&[0.1, 0.2, 0.3], 0.5).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_computed_scalar_net() {
        // d = 1, H = 1, depth 1, one sin/cos pair
        let dims = NetDims {
            d: 1,
            hidden: 1,
            depth: 1,
            t_emb_dim: 2,
        };
        let mut net = ScoreNet::<f64>::zeros(dims).unwrap();
        // w_in = [2.0 (z), 0.0 (sin), 1.0 (cos)], b_in = -0.5
        // block: w = 0.5, b = 0.25; w_out = 3.0, b_out = 0.1
        net.params_mut()
            .copy_from_slice(&[2.0, 0.0, 1.0, -0.5, 0.5, 0.25, 3.0, 0.1]);
        let (z, t) = (0.75f64, 0.5f64);
        let f = T_EMB_FREQ_RANGE.0;
        let a0 = 2.0 * z + (std::f64::consts::TAU * f * t).cos() - 0.5;
        let h0 = a0 / (1.0 + (-a0).exp());
        let a1 = 0.5 * h0 + 0.25;
        let h1 = h0 + a1 / (1.0 + (-a1).exp());
        let expected = 3.0 * h1 + 0.1;
        let out = net.forward(&[z], t).unwrap();
        assert!((out[0] - expected).abs() < 1e-14, "{} vs {expected}", out[0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = small(4, 7, 3, 1);
        let z = [0.3, -1.0, 2.0, 0.1];
        let a = net.forward(&z, 0.42).unwrap();
        let b = net.forward(&z, 0.42).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let net = small(2, 3, 1, 2);
        assert!(net.forward(&[1.0], 0.5).is_err());
        assert!(net.forward(&[1.0, f64::NAN], 0.5).is_err());
        assert!(net.forward(&[1.0, 2.0], 0.0).is_err());
        assert!(net.jvp_input(&[1.0, 2.0], 0.5, &[1.0]).is_err());
        assert!(net.backward_params(&[1.0, 2.0], 0.5, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn param_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = small(3, 6, 2, 3);
        let z = normal_vec(3, &mut rng);
        let u = normal_vec(3, &mut rng);
        let t = 0.37;
        let grad = net.backward_params(&z, t, &u).unwrap();
        let objective =
            |n: &ScoreNet<f64>| -> f64 { n.forward(&z, t).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum() };
        let eps = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..net.params().len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += eps;
            let mut minus = net.clone();
            minus.params_mut()[i] -= eps;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn zero_upstream_gives_zero_grad() {
        let net = small(3, 4, 2, 4);
        let g = net.backward_params(&[1.0, 2.0, 3.0], 0.9, &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn batch_grad_is_sum_of_sample_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = small(2, 5, 2, 6);
        let mut summed = vec![0.0; net.params().len()];
        let mut acc = vec![0.0; net.params().len()];
        for _ in 0..4 {
            let z = normal_vec(2, &mut rng);
            let u = normal_vec(2, &mut rng);
            let g = net.backward_params(&z, 0.6, &u).unwrap();
            summed.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
            let cache = net.forward_cached(&z, 0.6);
            net.accumulate_param_grad(&cache, &u, &mut acc);
        }
        for (a, b) in summed.iter().zip(&acc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jvp_matches_directional_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = small(4, 8, 3, 9);
        let z = normal_vec(4, &mut rng);
        let v = normal_vec(4, &mut rng);
        let t = 0.2;
        let jv = net.jvp_input(&z, t, &v).unwrap();
        let eps = 1e-4;
        let zp: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let zm: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
        let fp = net.forward(&zp, t).unwrap();
        let fm = net.forward(&zm, t).unwrap();
        for i in 0..4 {
            let fd = (fp[i] - fm[i]) / (2.0 * eps);
            assert!(
                (fd - jv[i]).abs() <= 1e-3 * fd.abs().max(1e-3),
                "{fd} vs {}",
                jv[i]
            );
        }
    }

    #[test]
    fn jvp_of_zero_is_zero_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = small(3, 5, 2, 12);
        let z = normal_vec(3, &mut rng);
        assert_eq!(net.jvp_input(&z, 0.5, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let v1 = normal_vec(3, &mut rng);
        let v2 = normal_vec(3, &mut rng);
        let (a, b) = (0.7, -2.5);
        let comb: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
        let j1 = net.jvp_input(&z, 0.5, &v1).unwrap();
        let j2 = net.jvp_input(&z, 0.5, &v2).unwrap();
        let jc = net.jvp_input(&z, 0.5, &comb).unwrap();
        for i in 0..3 {
            assert!((jc[i] - (a * j1[i] + b * j2[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_is_bounded_and_deterministic() {
        let f = embedding_frequencies::<f64>(128);
        assert_eq!(f.len(), 64);
        assert!((f[0] - T_EMB_FREQ_RANGE.0).abs() < 1e-15);
        assert!((f[63] - T_EMB_FREQ_RANGE.1).abs() < 1e-12);
        for &t in &[1e-5, 0.3, 1.0] {
            let e = time_embedding(&f, t);
            assert_eq!(e.len(), 128);
            assert!(e.iter().all(|x| (-1.0..=1.0).contains(x)));
            assert_eq!(e, time_embedding(&f, t));
        }
    }

    #[test]
    fn parameter_counts_track_reported_model_sizes() {
        // reported sizes for hidden = 2d, depth 6: 7.5M, 16.7M, 118.0M
        for (d, reported) in [(512usize, 7.5e6), (768, 16.7e6), (2048, 118.0e6)] {
            let count = NetDims::for_input(d).param_count() as f64;
            let rel = (count - reported).abs() / reported;
            assert!(rel < 0.10, "d={d}: {count} vs {reported}");
        }
        assert_eq!(NetDims::for_input(512).param_count(), 7_478_784);
    }

    #[test]
    fn cast_round_trips_through_f32() {
        let net = small(2, 3, 1, 13);
        let narrow: ScoreNet<f32> = net.cast();
        let again: ScoreNet<f32> = narrow.cast::<f64>().cast();
        assert_eq!(narrow, again);
    }
}
