//! Plain nested-loop reference implementation of the network, used as an
//! independent oracle. Reads parameters by name only.

#![allow(dead_code)]

use prompter_core::tensor::Real;
use prompter_core::transformer::Model;

pub type Mat = Vec<Vec<f64>>;

pub struct Reference<'a, F: Real> {
    pub model: &'a Model<F>,
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(t, x)| x * b[t][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    let n = a.first().map_or(0, Vec::len);
    (0..n).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn relu(a: &Mat) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect()
}

pub fn rms_norm(a: &Mat, gain: &[f64], eps: f64) -> Mat {
    a.iter()
        .map(|r| {
            let ms = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            r.iter().zip(gain).map(|(x, g)| x * inv * g).collect()
        })
        .collect()
}

fn cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

impl<'a, F: Real> Reference<'a, F> {
    pub fn new(model: &'a Model<F>) -> Self {
        Self { model }
    }

    pub fn mat(&self, name: &str) -> Mat {
        let t = self.model.params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"));
        let c = t.shape()[1];
        t.to_f64_vec().chunks(c).map(<[f64]>::to_vec).collect()
    }

    pub fn vector(&self, name: &str) -> Vec<f64> {
        self.model.params.by_name(name).unwrap().to_f64_vec()
    }

    fn eps(&self) -> f64 {
        self.model.config.norm_eps
    }

    pub fn embed(&self, tokens: &[usize], position: &str) -> Mat {
        let table = self.mat("shared.embedding");
        let pos = self.mat(position);
        let last = self.model.config.max_len - 1;
        tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| table[t].iter().zip(&pos[i.min(last)]).map(|(a, b)| a + b).collect())
            .collect()
    }

    /// Multi-head attention with optional `(K, V)` prefixes; also returns the
    /// per-head weights.
    pub fn attention(&self, prefix: &str, x: &Mat, kv: &Mat, pre: Option<(&Mat, &Mat)>, causal: bool) -> (Mat, Vec<Mat>) {
        let c = &self.model.config;
        let dh = c.d_model / c.n_heads;
        let q = matmul(x, &self.mat(&format!("{prefix}.q")));
        let mut k = matmul(kv, &self.mat(&format!("{prefix}.k")));
        let mut v = matmul(kv, &self.mat(&format!("{prefix}.v")));
        if let Some((pk, pv)) = pre {
            k = pk.iter().chain(&k).cloned().collect();
            v = pv.iter().chain(&v).cloned().collect();
        }
        let mut merged = vec![Vec::new(); x.len()];
        let mut weights = Vec::new();
        for j in 0..c.n_heads {
            let (qj, kj, vj) = (cols(&q, j * dh, dh), cols(&k, j * dh, dh), cols(&v, j * dh, dh));
            let mut w = Vec::new();
            for (i, qi) in qj.iter().enumerate() {
                let scores: Vec<f64> = kj
                    .iter()
                    .enumerate()
                    .map(|(t, kt)| {
                        if causal && t > i {
                            f64::NEG_INFINITY
                        } else {
                            qi.iter().zip(kt).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                        }
                    })
                    .collect();
                let p = softmax(&scores);
                let out: Vec<f64> = (0..dh).map(|col| p.iter().zip(&vj).map(|(pt, vt)| pt * vt[col]).sum()).collect();
                merged[i].extend(out);
                w.push(p);
            }
            weights.push(w);
        }
        (matmul(&merged, &self.mat(&format!("{prefix}.o"))), weights)
    }

    fn ffn(&self, prefix: &str, x: &Mat) -> Mat {
        let h = relu(&matmul(x, &self.mat(&format!("{prefix}.ff.wi"))));
        matmul(&h, &self.mat(&format!("{prefix}.ff.wo")))
    }

    /// Embedded input through every encoder layer; returns final states and
    /// each layer's residual output.
    pub fn encode_embedded(&self, input: Mat, prefixes: Option<&[(Mat, Mat)]>) -> (Mat, Vec<Mat>) {
        let mut h = input;
        let mut outs = Vec::new();
        for i in 0..self.model.config.enc_layers {
            let p = format!("encoder.layers.{i}");
            let x = rms_norm(&h, &self.vector(&format!("{p}.attn_norm")), self.eps());
            let pre = prefixes.map(|ps| (&ps[i].0, &ps[i].1));
            let (a, _) = self.attention(&format!("{p}.attn"), &x, &x, pre, false);
            h = add(&h, &a);
            let x = rms_norm(&h, &self.vector(&format!("{p}.ff_norm")), self.eps());
            h = add(&h, &self.ffn(&p, &x));
            outs.push(h.clone());
        }
        (rms_norm(&h, &self.vector("encoder.final_norm"), self.eps()), outs)
    }

    pub fn encode(&self, tokens: &[usize], prefixes: Option<&[(Mat, Mat)]>) -> Mat {
        self.encode_embedded(self.embed(tokens, "encoder.position"), prefixes).0
    }

    pub fn decode(&self, targets: &[usize], enc: &Mat) -> Mat {
        let mut h = self.embed(targets, "decoder.position");
        for i in 0..self.model.config.dec_layers {
            let p = format!("decoder.layers.{i}");
            let x = rms_norm(&h, &self.vector(&format!("{p}.self_attn_norm")), self.eps());
            h = add(&h, &self.attention(&format!("{p}.self_attn"), &x, &x, None, true).0);
            let x = rms_norm(&h, &self.vector(&format!("{p}.cross_attn_norm")), self.eps());
            h = add(&h, &self.attention(&format!("{p}.cross_attn"), &x, enc, None, false).0);
            let x = rms_norm(&h, &self.vector(&format!("{p}.ff_norm")), self.eps());
            h = add(&h, &self.ffn(&p, &x));
        }
        let h = rms_norm(&h, &self.vector("decoder.final_norm"), self.eps());
        let scale = 1.0 / (self.model.config.d_model as f64).sqrt();
        matmul(&h, &transpose(&self.mat("shared.embedding")))
            .into_iter()
            .map(|r| r.into_iter().map(|x| x * scale).collect())
            .collect()
    }

    pub fn slot_prompt(&self, description: &[usize]) -> Mat {
        let table = self.mat("shared.embedding");
        let e: Mat = description.iter().map(|&t| table[t].clone()).collect();
        let q = matmul(&self.mat("prompter.global_prompt"), &self.mat("prompter.cross_attn.q"));
        let k = matmul(&e, &self.mat("prompter.cross_attn.k"));
        let v = matmul(&e, &self.mat("prompter.cross_attn.v"));
        let d = self.model.config.d_model as f64;
        let scores: Mat = matmul(&q, &transpose(&k)).into_iter().map(|r| r.into_iter().map(|x| x / d.sqrt()).collect()).collect();
        let att: Mat = scores.iter().map(|r| softmax(r)).collect();
        matmul(&att, &v)
    }

    pub fn prefixes(&self, s: &Mat) -> Vec<(Mat, Mat)> {
        (0..self.model.config.enc_layers)
            .map(|i| {
                let g = |w: &str| self.mat(&format!("prompter.generators.{i}.{w}"));
                let key = matmul(&relu(&matmul(s, &g("key_down"))), &g("key_up"));
                let value = matmul(&relu(&matmul(s, &g("value_down"))), &g("value_up"));
                (key, value)
            })
            .collect()
    }
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
