use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Checkpoint, DropoutConfig, EvalMode, ModelConfig, Pooling, LN_EPS, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::{Graph, MaskRng, RngStream, Tensor, Var};

/// Positive-class probability sits at index 1.
pub type ClassProbs = [f64; 2];

/// Row-major token ids, right-padded with [`PAD_ID`] to a common width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMatrix {
    seq_len: usize,
    ids: Vec<usize>,
}

impl TokenMatrix {
    pub fn from_rows(rows: &[Vec<usize>], seq_len: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len() * seq_len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() > seq_len {
                return Err(Error::invalid(format!(
                    "row {i} has {} tokens, longer than width {seq_len}",
                    row.len()
                )));
            }
            ids.extend_from_slice(row);
            ids.extend(std::iter::repeat_n(PAD_ID, seq_len - row.len()));
        }
        Ok(Self { seq_len, ids })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn rows(&self) -> usize {
        self.ids.len().checked_div(self.seq_len).unwrap_or(0)
    }

    pub fn padded_row(&self, r: usize) -> &[usize] {
        &self.ids[r * self.seq_len..(r + 1) * self.seq_len]
    }

    /// Row `r` without its trailing padding.
    pub fn row(&self, r: usize) -> &[usize] {
        let row = self.padded_row(r);
        let len = row.iter().rposition(|&t| t != PAD_ID).map_or(0, |p| p + 1);
        &row[..len]
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(rows.len() * self.seq_len);
        for &r in rows {
            ids.extend_from_slice(self.padded_row(r));
        }
        Self {
            seq_len: self.seq_len,
            ids,
        }
    }
}

fn layer_names(i: usize) -> [String; 16] {
    let p = format!("layer{i}");
    [
        format!("{p}.ln1.gain"),
        format!("{p}.ln1.bias"),
        format!("{p}.attn.q.weight"),
        format!("{p}.attn.q.bias"),
        format!("{p}.attn.k.weight"),
        format!("{p}.attn.k.bias"),
        format!("{p}.attn.v.weight"),
        format!("{p}.attn.v.bias"),
        format!("{p}.attn.o.weight"),
        format!("{p}.attn.o.bias"),
        format!("{p}.ln2.gain"),
        format!("{p}.ln2.bias"),
        format!("{p}.ffn.in.weight"),
        format!("{p}.ffn.in.bias"),
        format!("{p}.ffn.out.weight"),
        format!("{p}.ffn.out.bias"),
    ]
}

/// Every parameter of the architecture with its shape.
pub fn parameter_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let (d, f) = (cfg.d_model, cfg.d_ffn);
    let mut shapes = BTreeMap::new();
    shapes.insert("tok_emb".to_owned(), vec![cfg.vocab_size, d]);
    shapes.insert("pos_emb".to_owned(), vec![cfg.max_seq_len, d]);
    for i in 0..cfg.layers {
        let n = layer_names(i);
        let layer_shapes = [
            vec![d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
        ];
        for (name, shape) in n.into_iter().zip(layer_shapes) {
            shapes.insert(name, shape);
        }
    }
    shapes.insert("final_ln.gain".to_owned(), vec![d]);
    shapes.insert("final_ln.bias".to_owned(), vec![d]);
    shapes.insert("head.weight".to_owned(), vec![d, 2]);
    shapes.insert("head.bias".to_owned(), vec![2]);
    shapes
}

pub fn parameter_count(cfg: &ModelConfig) -> usize {
    parameter_shapes(cfg)
        .values()
        .map(|s| s.iter().product::<usize>())
        .sum()
}

pub(crate) fn is_norm_or_bias(name: &str) -> bool {
    name.ends_with(".bias") || name.ends_with(".gain")
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        // Box-Muller; one draw per call keeps the stream layout simple.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Fresh checkpoint: truncated-normal weights and embeddings (cut at two
/// standard deviations), zero biases, unit norm gains. Parameters are drawn in name order, so the result is a
/// pure function of `(config, init_seed)`.
pub fn build(config: &ModelConfig, init_seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut parameters = BTreeMap::new();
    for (name, shape) in parameter_shapes(config) {
        let t = if name.ends_with(".gain") {
            Tensor::filled(&shape, 1.0)
        } else if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| truncated_normal(&mut rng, config.init_std))
                .collect();
            Tensor::new(shape, data)?
        };
        parameters.insert(name, t);
    }
    Ok(Checkpoint {
        model_config: config.clone(),
        parameters,
        training_seed: init_seed,
        provenance: format!("init seed {init_seed}"),
        vocab: Vec::new(),
    })
}

pub(crate) struct LayerVars {
    ln1: (Var, Var),
    q: (Var, Var),
    k: (Var, Var),
    v: (Var, Var),
    o: (Var, Var),
    ln2: (Var, Var),
    ffn_in: (Var, Var),
    ffn_out: (Var, Var),
}

/// Parameters of a checkpoint attached to a graph as borrowed leaves.
pub(crate) struct ParamVars {
    tok: Var,
    pos: Var,
    layers: Vec<LayerVars>,
    final_ln: (Var, Var),
    head: (Var, Var),
    pub named: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn attach<'a>(
        g: &mut Graph<'a>,
        ckpt: &'a Checkpoint,
        requires_grad: bool,
    ) -> Result<Self> {
        let mut named = Vec::with_capacity(ckpt.parameters.len());
        let mut get = |name: &str| -> Result<Var> {
            let t = ckpt
                .parameters
                .get(name)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter `{name}`")))?;
            let v = g.leaf_ref(t, requires_grad);
            named.push((name.to_owned(), v));
            Ok(v)
        };
        let tok = get("tok_emb")?;
        let pos = get("pos_emb")?;
        let mut layers = Vec::with_capacity(ckpt.model_config.layers);
        for i in 0..ckpt.model_config.layers {
            let n = layer_names(i);
            let mut pair = |a: usize| -> Result<(Var, Var)> { Ok((get(&n[a])?, get(&n[a + 1])?)) };
            layers.push(LayerVars {
                ln1: pair(0)?,
                q: pair(2)?,
                k: pair(4)?,
                v: pair(6)?,
                o: pair(8)?,
                ln2: pair(10)?,
                ffn_in: pair(12)?,
                ffn_out: pair(14)?,
            });
        }
        let final_ln = (get("final_ln.gain")?, get("final_ln.bias")?);
        let head = (get("head.weight")?, get("head.bias")?);
        Ok(Self {
            tok,
            pos,
            layers,
            final_ln,
            head,
            named,
        })
    }
}

/// Which dropout sites are live and at what rate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sites {
    pub attention: f64,
    pub ffn: f64,
    pub active: bool,
}

impl Sites {
    pub fn new(dropout: &DropoutConfig, active: bool) -> Self {
        Self {
            attention: dropout.attention_rate,
            ffn: dropout.ffn_rate,
            active,
        }
    }
}

fn linear(g: &mut Graph<'_>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

fn check_tokens(cfg: &ModelConfig, ids: &[usize]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::invalid("empty token sequence"));
    }
    if ids.len() > cfg.max_seq_len {
        return Err(Error::invalid(format!(
            "sequence length {} exceeds max_seq_len {}",
            ids.len(),
            cfg.max_seq_len
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::invalid(format!(
            "token id {bad} out of vocabulary (size {})",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Final-layer-normed hidden states `[len, d_model]` for one sequence.
fn encode(
    g: &mut Graph<'_>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    ids: &[usize],
    sites: Sites,
    rng: &mut MaskRng,
) -> Result<Var> {
    check_tokens(cfg, ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = g.embedding(pv.tok, ids)?;
    let pos = g.embedding(pv.pos, &positions)?;
    let mut h = g.add(tok, pos)?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    for layer in &pv.layers {
        let a = g.layer_norm(h, layer.ln1.0, layer.ln1.1, LN_EPS)?;
        let q = linear(g, a, layer.q)?;
        let k = linear(g, a, layer.k)?;
        let v = linear(g, a, layer.v)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let qh = g.cols(q, head * dh, dh)?;
            let kh = g.cols(k, head * dh, dh)?;
            let vh = g.cols(v, head * dh, dh)?;
            let scores = g.matmul_t(qh, kh)?;
            let mut scores = g.scale(scores, scale);
            if cfg.family.is_causal() {
                scores = g.causal_mask(scores)?;
            }
            let probs = g.softmax(scores);
            let probs = g.dropout(probs, sites.attention, rng, sites.active)?;
            heads.push(g.matmul(probs, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let attn = linear(g, merged, layer.o)?;
        h = g.add(h, attn)?;

        let b = g.layer_norm(h, layer.ln2.0, layer.ln2.1, LN_EPS)?;
        let f = linear(g, b, layer.ffn_in)?;
        let f = g.gelu(f);
        let f = g.dropout(f, sites.ffn, rng, sites.active)?;
        let f = linear(g, f, layer.ffn_out)?;
        h = g.add(h, f)?;
    }
    g.layer_norm(h, pv.final_ln.0, pv.final_ln.1, LN_EPS)
}

/// Classification logits `[1, 2]` for one sequence.
pub(crate) fn sequence_logits(
    g: &mut Graph<'_>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    ids: &[usize],
    sites: Sites,
    rng: &mut MaskRng,
) -> Result<Var> {
    let h = encode(g, pv, cfg, ids, sites, rng)?;
    let pooled = match cfg.pooling {
        Pooling::Cls => g.row(h, 0)?,
        Pooling::LastToken => g.row(h, ids.len() - 1)?,
        Pooling::Mean => g.mean_rows(h)?,
    };
    linear(g, pooled, pv.head)
}

/// Logits `[rows, 2]` for the selected rows of a token matrix, drawing masks
/// from `rng` in row order.
pub(crate) fn batch_logits(
    g: &mut Graph<'_>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    tokens: &TokenMatrix,
    rows: &[usize],
    sites: Sites,
    rng: &mut MaskRng,
) -> Result<Var> {
    let mut out = Vec::with_capacity(rows.len());
    for &r in rows {
        out.push(sequence_logits(g, pv, cfg, tokens.row(r), sites, rng)?);
    }
    g.stack_rows(&out)
}

pub(crate) fn probs_from_logits(l: &[f64]) -> ClassProbs {
    let max = l[0].max(l[1]);
    let e0 = (l[0] - max).exp();
    let e1 = (l[1] - max).exp();
    let total = e0 + e1;
    [e0 / total, e1 / total]
}

/// Class probabilities for every row of `batch`.
///
/// In [`EvalMode::Deterministic`] no dropout site is active and the output
/// depends only on `(ckpt, batch)`. In [`EvalMode::Stochastic`] attention
/// probabilities and feed-forward activations are masked at the configured
/// rates; masks come from one generator seeded by `rng`, consumed row by row.
pub fn forward(
    ckpt: &Checkpoint,
    batch: &TokenMatrix,
    dropout: &DropoutConfig,
    mode: EvalMode,
    rng: RngStream,
) -> Result<Vec<ClassProbs>> {
    dropout.validate()?;
    let sites = Sites::new(dropout, mode == EvalMode::Stochastic);
    let mut gen = rng.generator();
    let cfg = &ckpt.model_config;
    (0..batch.rows())
        .map(|r| {
            let mut g = Graph::new();
            let pv = ParamVars::attach(&mut g, ckpt, false)?;
            let logits = sequence_logits(&mut g, &pv, cfg, batch.row(r), sites, &mut gen)?;
            Ok(probs_from_logits(g.value(logits).data()))
        })
        .collect()
}

/// Logits of the classification head applied at every position, without
/// dropout. Used to probe attention directionality.
pub fn position_logits(ckpt: &Checkpoint, ids: &[usize]) -> Result<Vec<[f64; 2]>> {
    let mut g = Graph::new();
    let pv = ParamVars::attach(&mut g, ckpt, false)?;
    let sites = Sites {
        attention: 0.0,
        ffn: 0.0,
        active: false,
    };
    let mut unused = RngStream::new(0, 0).generator();
    let h = encode(&mut g, &pv, &ckpt.model_config, ids, sites, &mut unused)?;
    let out = linear(&mut g, h, pv.head)?;
    Ok(g.value(out)
        .data()
        .chunks_exact(2)
        .map(|c| [c[0], c[1]])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Family;

    fn cfg(family: Family) -> ModelConfig {
        ModelConfig::new(family, 2, 2, 16, 32, 20, 12)
    }

    fn batch() -> TokenMatrix {
        TokenMatrix::from_rows(
            &[
                vec![2, 5, 6, 7, 3],
                vec![2, 9, 3, 11, 12, 13, 4],
                vec![2, 8],
            ],
            12,
        )
        .unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let a = build(&cfg(Family::Encoder), 42).unwrap();
        let b = build(&cfg(Family::Encoder), 42).unwrap();
        assert_eq!(a.parameters, b.parameters);
        let c = build(&cfg(Family::Encoder), 43).unwrap();
        assert_ne!(a.parameters, c.parameters);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let c = ModelConfig::new(Family::Encoder, 2, 2, 32, 64, 100, 24);
        let (v, t, d, f, l) = (100, 24, 32, 64, 2);
        // embeddings + per layer (2 norms, 4 projections, 2 ffn linears) + final norm + head
        let per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let want = v * d + t * d + l * per_layer + 2 * d + (2 * d + 2);
        assert_eq!(want, 21_186);
        assert_eq!(parameter_count(&c), want);
        assert_eq!(build(&c, 1).unwrap().parameter_count(), want);
    }

    #[test]
    fn init_conventions() {
        let ck = build(&cfg(Family::Encoder), 3).unwrap();
        for (name, t) in &ck.parameters {
            if name.ends_with(".gain") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            } else if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                assert!(t.data().iter().all(|&v| v.abs() <= 0.04), "{name}");
            }
        }
    }

    #[test]
    fn rejects_bad_heads_and_tokens() {
        let mut bad = cfg(Family::Encoder);
        bad.heads = 3;
        assert!(build(&bad, 0).is_err());
        let ck = build(&cfg(Family::Encoder), 0).unwrap();
        let oov = TokenMatrix::from_rows(&[vec![2, 99]], 12).unwrap();
        let r = forward(
            &ck,
            &oov,
            &DropoutConfig::deterministic(),
            EvalMode::Deterministic,
            RngStream::new(0, 0),
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn probabilities_sum_to_one() {
        for family in [Family::Encoder, Family::Decoder] {
            let ck = build(&cfg(family), 5).unwrap();
            let out = forward(
                &ck,
                &batch(),
                &DropoutConfig::high_both(),
                EvalMode::Stochastic,
                RngStream::new(1, 2),
            )
            .unwrap();
            assert_eq!(out.len(), 3);
            for p in out {
                assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_rates_match_deterministic_bitwise() {
        let ck = build(&cfg(Family::Encoder), 5).unwrap();
        let det = forward(
            &ck,
            &batch(),
            &DropoutConfig::deterministic(),
            EvalMode::Deterministic,
            RngStream::new(0, 0),
        )
        .unwrap();
        let sto = forward(
            &ck,
            &batch(),
            &DropoutConfig::deterministic(),
            EvalMode::Stochastic,
            RngStream::new(9, 9),
        )
        .unwrap();
        assert_eq!(det, sto);
        let inactive = forward(
            &ck,
            &batch(),
            &DropoutConfig::high_both(),
            EvalMode::Deterministic,
            RngStream::new(3, 4),
        )
        .unwrap();
        assert_eq!(det, inactive);
    }

    #[test]
    fn decoder_positions_ignore_the_future() {
        let ck = build(&cfg(Family::Decoder), 11).unwrap();
        let ids = vec![2, 5, 6, 7, 8, 9];
        let base = position_logits(&ck, &ids).unwrap();
        for j in 1..ids.len() {
            let mut edited = ids.clone();
            edited[j] = 15;
            let out = position_logits(&ck, &edited).unwrap();
            for i in 0..j {
                assert_eq!(out[i], base[i], "position {i} changed after editing {j}");
            }
            assert_ne!(out[j], base[j]);
        }
    }

    #[test]
    fn encoder_positions_see_the_future() {
        let ck = build(&cfg(Family::Encoder), 11).unwrap();
        let ids = vec![2, 5, 6, 7];
        let base = position_logits(&ck, &ids).unwrap();
        let mut edited = ids.clone();
        edited[3] = 15;
        assert_ne!(position_logits(&ck, &edited).unwrap()[0], base[0]);
    }

    #[test]
    fn padding_is_stripped() {
        let m = TokenMatrix::from_rows(&[vec![2, 4], vec![2, 5, 6]], 4).unwrap();
        assert_eq!(m.row(0), &[2, 4]);
        assert_eq!(m.padded_row(0), &[2, 4, 0, 0]);
        assert_eq!(m.rows(), 2);
        assert!(TokenMatrix::from_rows(&[vec![1; 5]], 4).is_err());
    }
}
