use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::{affine, Matrix};
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UAMLP\0\0\0";
const VERSION: u32 = 1;

/// Fully-connected network: tanh on hidden layers, identity on the output.
///
/// Parameters live in one flat buffer, layer by layer, each layer storing its
/// `out x in` weight matrix row-major followed by its `out` biases. Optimizers
/// and target-network averaging operate on that flat buffer directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::config(format!(
            "network needs at least input and output widths, got {dims:?}"
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::config(format!("network widths must be positive, got {dims:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Every weight and bias drawn independently from `N(0, sigma^2)`.
    pub fn init_gaussian<R: Rng + ?Sized>(dims: &[usize], sigma: f64, rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("init sigma must be positive, got {sigma}")));
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
        let params = (0..param_count(dims)).map(|_| normal.sample(rng)).collect();
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        })
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let want = param_count(dims);
        if params.len() != want {
            return Err(Error::usage(format!(
                "expected {want} parameters for {dims:?}, got {}",
                params.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weights, biases)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[1] * w[0] + w[1];
        }
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let wend = off + o * i;
        (&self.params[off..wend], &self.params[wend..wend + o])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "input width {} does not match network input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.forward_batch(&Matrix::row_vector(x.to_vec()))?.into_vec())
    }

    /// Forward pass on a batch, one sample per row.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::usage(format!(
                "input width {} does not match network input {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut h = None::<Matrix>;
        let mut off = 0;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (i, o) = (w[0], w[1]);
            let wend = off + o * i;
            let mut next = affine(
                h.as_ref().unwrap_or(x),
                &self.params[off..wend],
                &self.params[wend..wend + o],
                o,
            );
            if l != last {
                next.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            }
            off = wend + o;
            h = Some(next);
        }
        Ok(h.unwrap())
    }

    /// Records this network's parameters on `tape`. With `trainable = false`
    /// the parameters enter as constants and receive no gradient.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let mut layers = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = self.layer(l);
            let wm = Matrix::from_vec(o, i, w.to_vec());
            let bm = Matrix::from_vec(1, o, b.to_vec());
            let (wv, bv) = if trainable {
                (tape.param(wm), tape.param(bm))
            } else {
                (tape.constant(wm), tape.constant(bm))
            };
            layers.push(BoundLayer { w: wv, b: bv, w_len: o * i, b_len: o });
        }
        BoundMlp {
            layers,
            n_params: self.params.len(),
        }
    }

    /// Polyak averaging: `self <- keep * self + (1 - keep) * source`.
    pub fn soft_update_from(&mut self, source: &Mlp, keep: f64) -> Result<()> {
        if source.dims != self.dims {
            return Err(Error::usage("soft update between networks of different shape"));
        }
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t = keep * *t + (1.0 - keep) * s;
        }
        Ok(())
    }

    /// Binary checkpoint: magic, version, layer widths, then parameters, all
    /// little-endian.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    /// Parses one network from the front of `reader`.
    pub fn read_from(reader: &mut ByteReader<'_>) -> Result<Self> {
        if reader.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad network magic".into()));
        }
        let version = reader.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported network version {version}")));
        }
        let n = reader.u32()? as usize;
        let dims = (0..n).map(|_| reader.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        check_dims(&dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = reader.u64()? as usize;
        if count != param_count(&dims) {
            return Err(Error::Checkpoint("parameter count does not match widths".into()));
        }
        let params = (0..count).map(|_| reader.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Self { dims, params })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let net = Self::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after network".into()));
        }
        Ok(net)
    }
}

/// An [`Mlp`] whose parameters are recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<BoundLayer>,
    n_params: usize,
}

#[derive(Debug, Clone, Copy)]
struct BoundLayer {
    w: Var,
    b: Var,
    w_len: usize,
    b_len: usize,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            h = tape.affine(h, layer.w, layer.b)?;
            if l != last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Parameter leaves in layout order (weights then biases, per layer).
    pub fn param_vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|l| [l.w, l.b])
    }

    /// Flat gradient in the same layout as [`Mlp::params`]. Parameters that did
    /// not influence the loss get zero.
    pub fn gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params);
        for layer in &self.layers {
            for (v, len) in [(layer.w, layer.w_len), (layer.b, layer.b_len)] {
                match grads.get(v) {
                    Some(g) => out.extend_from_slice(g.as_slice()),
                    None => out.resize(out.len() + len, 0.0),
                }
            }
        }
        debug_assert_eq!(out.len(), self.n_params);
        out
    }
}

/// Cursor over little-endian checkpoint bytes.
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
