//! A one-layer masked language model with hand-derived gradients.
//!
//! ```text
//! x_i  = tok[t_i] + pos[i]
//! a_r  = softmax_j((x_r Wq) · (x_j Wk) / sqrt(d))
//! h_r  = tanh(x_r + (Σ_j a_rj x_j Wv) Wo + bo)
//! z    = dec h_m + out_bias           (logits at the mask row m)
//! ```
//!
//! The output table `dec` is separate from the input embeddings `tok`. With
//! a tied table the trigger loss drags every trigger word's embedding toward
//! one shared direction, which erases what tells the event types apart.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EncoderError, EncoderKind, EncoderSpec, MaskedLm, Segmenter, Vocab, WordPiece};
use crate::optim::Parameters;
use crate::sampler;

const PARAMS_FORMAT: &str = "fsed-toy-params/1";

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub tok: Array2<f64>,
    pub pos: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub dec: Array2<f64>,
    pub out_bias: Array2<f64>,
}

impl Parameters for ToyParams {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("tok", &self.tok),
            ("pos", &self.pos),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("dec", &self.dec),
            ("out_bias", &self.out_bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![
            ("tok", &mut self.tok),
            ("pos", &mut self.pos),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("dec", &mut self.dec),
            ("out_bias", &mut self.out_bias),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsManifest {
    format: String,
    dtype: String,
    tensors: Vec<TensorEntry>,
    sha256: String,
}

impl ToyParams {
    /// Little-endian f64 payload in tensor order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.num_params() * 8);
        for (_, t) in self.tensors() {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Writes `<stem>.bin` and `<stem>.manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), EncoderError> {
        let bytes = self.to_bytes();
        let mut offset = 0;
        let tensors = self
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.to_string(),
                    shape: [t.nrows(), t.ncols()],
                    offset,
                    len: t.len(),
                };
                offset += t.len() * 8;
                e
            })
            .collect();
        let manifest = ParamsManifest {
            format: PARAMS_FORMAT.to_string(),
            dtype: "f64-le".to_string(),
            tensors,
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        fs::write(dir.join(format!("{stem}.bin")), &bytes)?;
        fs::write(
            dir.join(format!("{stem}.manifest.json")),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, EncoderError> {
        let manifest: ParamsManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.manifest.json")))?)
                .map_err(|e| EncoderError::Format(e.to_string()))?;
        if manifest.format != PARAMS_FORMAT {
            return Err(EncoderError::Format(format!("unsupported format {}", manifest.format)));
        }
        let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
        if hex::encode(Sha256::digest(&bytes)) != manifest.sha256 {
            return Err(EncoderError::Format("checksum mismatch".into()));
        }
        let get = |name: &str| -> Result<Array2<f64>, EncoderError> {
            let e = manifest
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| EncoderError::Format(format!("missing tensor {name}")))?;
            let raw = bytes
                .get(e.offset..e.offset + e.len * 8)
                .ok_or_else(|| EncoderError::Format(format!("tensor {name} out of bounds")))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Array2::from_shape_vec((e.shape[0], e.shape[1]), data)
                .map_err(|err| EncoderError::Format(err.to_string()))
        };
        Ok(ToyParams {
            tok: get("tok")?,
            pos: get("pos")?,
            wq: get("wq")?,
            wk: get("wk")?,
            wv: get("wv")?,
            wo: get("wo")?,
            bo: get("bo")?,
            dec: get("dec")?,
            out_bias: get("out_bias")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    spec: EncoderSpec,
    vocab: Vocab,
    segmenter: WordPiece,
    params: ToyParams,
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl rand::Rng) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

/// Builds a seeded toy backend over `vocab`.
pub fn toy_encoder(spec: EncoderSpec, vocab: Vocab) -> ToyEncoder {
    assert!(spec.dim >= 2, "toy encoder needs d >= 2");
    let d = spec.dim;
    let v = vocab.len();
    let mut rng = sampler::rng(spec.seed);
    let w_std = 1.0 / (d as f64).sqrt();
    let params = ToyParams {
        tok: gaussian(v, d, 0.2, &mut rng),
        pos: gaussian(spec.max_tokens, d, 0.05, &mut rng),
        wq: gaussian(d, d, w_std, &mut rng),
        wk: gaussian(d, d, w_std, &mut rng),
        wv: gaussian(d, d, w_std, &mut rng),
        wo: gaussian(d, d, w_std, &mut rng),
        bo: Array2::zeros((1, d)),
        dec: gaussian(v, d, 0.5, &mut rng),
        out_bias: Array2::zeros((1, v)),
    };
    ToyEncoder {
        spec: EncoderSpec {
            kind: EncoderKind::Toy,
            ..spec
        },
        vocab,
        segmenter: WordPiece::uncased(),
        params,
    }
}

impl ToyEncoder {
    pub fn from_parts(spec: EncoderSpec, vocab: Vocab, params: ToyParams) -> Result<Self, EncoderError> {
        let ok = params.tok.dim() == (vocab.len(), spec.dim)
            && params.pos.dim() == (spec.max_tokens, spec.dim)
            && params.dec.dim() == (vocab.len(), spec.dim)
            && params.out_bias.dim() == (1, vocab.len());
        if !ok {
            return Err(EncoderError::Format(
                "parameter shapes disagree with spec and vocabulary".into(),
            ));
        }
        Ok(ToyEncoder {
            spec,
            vocab,
            segmenter: WordPiece::uncased(),
            params,
        })
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ToyTape {
    tokens: Vec<u32>,
    rows: Vec<usize>,
    x: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    q: Vec<Array1<f64>>,
    attn: Vec<Array1<f64>>,
    ctx: Vec<Array1<f64>>,
    h: Vec<Array1<f64>>,
    logits: Array1<f64>,
}

impl MaskedLm for ToyEncoder {
    type Params = ToyParams;
    type Tape = ToyTape;

    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn segmenter(&self) -> &dyn Segmenter {
        &self.segmenter
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn params(&self) -> &ToyParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ToyParams {
        &mut self.params
    }

    fn forward(&self, tokens: &[u32], rows: &[usize]) -> Result<ToyTape, EncoderError> {
        let n = tokens.len();
        if n == 0 || rows.is_empty() {
            return Err(EncoderError::Empty);
        }
        if n > self.spec.max_tokens {
            return Err(EncoderError::TooLong {
                len: n,
                max: self.spec.max_tokens,
            });
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(EncoderError::MaskOutOfRange { position: r, len: n });
        }
        let p = &self.params;
        let d = self.spec.dim;
        let mut x = Array2::zeros((n, d));
        for (i, &t) in tokens.iter().enumerate() {
            if t as usize >= self.vocab.len() {
                return Err(EncoderError::UnknownToken {
                    id: t,
                    size: self.vocab.len(),
                });
            }
            let mut row = x.row_mut(i);
            row.assign(&p.tok.row(t as usize));
            row += &p.pos.row(i);
        }
        let k = x.dot(&p.wk);
        let v = x.dot(&p.wv);
        let scale = 1.0 / (d as f64).sqrt();
        let bo = p.bo.row(0);

        let mut tape = ToyTape {
            tokens: tokens.to_vec(),
            rows: rows.to_vec(),
            q: Vec::with_capacity(rows.len()),
            attn: Vec::with_capacity(rows.len()),
            ctx: Vec::with_capacity(rows.len()),
            h: Vec::with_capacity(rows.len()),
            logits: Array1::zeros(0),
            x,
            k,
            v,
        };
        for &r in rows {
            let q = tape.x.row(r).dot(&p.wq);
            let scores = tape.k.dot(&q) * scale;
            let attn = softmax(&scores);
            let ctx = tape.v.t().dot(&attn);
            let u = &tape.x.row(r) + &ctx.dot(&p.wo) + bo;
            tape.h.push(u.mapv(f64::tanh));
            tape.q.push(q);
            tape.attn.push(attn);
            tape.ctx.push(ctx);
        }
        tape.logits = p.dec.dot(&tape.h[0]) + p.out_bias.row(0);
        Ok(tape)
    }

    fn hidden<'t>(&self, tape: &'t ToyTape, i: usize) -> &'t Array1<f64> {
        &tape.h[i]
    }

    fn logits<'t>(&self, tape: &'t ToyTape) -> &'t Array1<f64> {
        &tape.logits
    }

    fn backward(
        &self,
        tape: &ToyTape,
        d_hidden: &[Array1<f64>],
        d_logits: Option<&Array1<f64>>,
        g: &mut ToyParams,
    ) {
        let p = &self.params;
        let d = self.spec.dim;
        let scale = 1.0 / (d as f64).sqrt();
        let mut dh: Vec<Array1<f64>> = d_hidden.to_vec();
        dh.resize(tape.rows.len(), Array1::zeros(d));

        if let Some(dz) = d_logits {
            // z = dec h0 + out_bias
            g.dec += &outer(dz, &tape.h[0]);
            dh[0] += &p.dec.t().dot(dz);
            g.out_bias.row_mut(0).scaled_add(1.0, dz);
        }

        let mut dx = Array2::<f64>::zeros(tape.x.raw_dim());
        let mut dk = Array2::<f64>::zeros(tape.k.raw_dim());
        let mut dv = Array2::<f64>::zeros(tape.v.raw_dim());
        for (i, &r) in tape.rows.iter().enumerate() {
            let h = &tape.h[i];
            let du = &dh[i] * &h.mapv(|y| 1.0 - y * y);
            dx.row_mut(r).scaled_add(1.0, &du);
            g.wo += &outer(&tape.ctx[i], &du);
            g.bo.row_mut(0).scaled_add(1.0, &du);
            let dctx = p.wo.dot(&du);

            let a = &tape.attn[i];
            // ctx = V^T a
            dv += &outer(a, &dctx);
            let da = tape.v.dot(&dctx);
            let dot = a.dot(&da);
            let ds = a * &(da - dot);

            // scores = K q * scale
            let dq = tape.k.t().dot(&ds) * scale;
            dk += &(outer(&ds, &tape.q[i]) * scale);
            g.wq += &outer(&tape.x.row(r).to_owned(), &dq);
            dx.row_mut(r).scaled_add(1.0, &p.wq.dot(&dq));
        }
        g.wk += &tape.x.t().dot(&dk);
        g.wv += &tape.x.t().dot(&dv);
        dx += &dk.dot(&p.wk.t());
        dx += &dv.dot(&p.wv.t());

        for (i, &t) in tape.tokens.iter().enumerate() {
            let row = dx.row(i);
            g.tok.row_mut(t as usize).scaled_add(1.0, &row);
            g.pos.row_mut(i).scaled_add(1.0, &row);
        }
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Numerically stable softmax.
pub(crate) fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = x.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}
