//! Recurrent and attention building blocks.
//!
//! All vectors are `[1, n]` rows and sequences of vectors are `[T, n]`
//! matrices. Weight matrices are stored input-major (`[in, out]`) so a layer
//! is `x · W + b`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Affine map `x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_init(format!("{prefix}.w"), &[input_dim, output_dim], rng)?;
        let b = if bias {
            Some(store.add_init(format!("{prefix}.b"), &[1, output_dim], rng)?)
        } else {
            None
        };
        Ok(Linear {
            w,
            b,
            input_dim,
            output_dim,
        })
    }

    pub fn num_params(input_dim: usize, output_dim: usize, bias: bool) -> usize {
        input_dim * output_dim + if bias { output_dim } else { 0 }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Weights of one GRU transition.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = |name: &str, rows: usize| {
            store.add_init(format!("{prefix}.{name}"), &[rows, hidden_dim], rng)
        };
        Ok(GruParams {
            w_z: w("w_z", input_dim)?,
            w_r: w("w_r", input_dim)?,
            w_h: w("w_h", input_dim)?,
            u_z: w("u_z", hidden_dim)?,
            u_r: w("u_r", hidden_dim)?,
            u_h: w("u_h", hidden_dim)?,
            b_z: w("b_z", 1)?,
            b_r: w("b_r", 1)?,
            b_h: w("b_h", 1)?,
            input_dim,
            hidden_dim,
        })
    }

    pub fn num_params(input_dim: usize, hidden_dim: usize) -> usize {
        3 * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim)
    }
}

fn gate<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h: Var,
    w: ParamId,
    u: ParamId,
    b: ParamId,
) -> Result<Var> {
    let (w, u, b) = (g.param(w), g.param(u), g.param(b));
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add_row(s, b)
}

/// One GRU transition:
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_cell<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    p: &GruParams,
) -> Result<Var> {
    if g.shape(x) != [1, p.input_dim] {
        return Err(Error::shape(
            "gru_cell input",
            g.shape(x),
            &[1, p.input_dim],
        ));
    }
    if g.shape(h_prev) != [1, p.hidden_dim] {
        return Err(Error::shape(
            "gru_cell state",
            g.shape(h_prev),
            &[1, p.hidden_dim],
        ));
    }
    let z_pre = gate(g, x, h_prev, p.w_z, p.u_z, p.b_z)?;
    let z = g.sigmoid(z_pre);
    let r_pre = gate(g, x, h_prev, p.w_r, p.u_r, p.b_r)?;
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h_prev)?;
    let cand_pre = gate(g, x, rh, p.w_h, p.u_h, p.b_h)?;
    let cand = g.tanh(cand_pre);
    let keep = g.one_minus(z);
    let old = g.mul(keep, h_prev)?;
    let new = g.mul(z, cand)?;
    g.add(old, new)
}

/// Runs a GRU over the rows of `inputs`, returning every state in input order.
pub fn gru_unroll<T: Scalar>(
    g: &mut Graph<'_, T>,
    inputs: Var,
    p: &GruParams,
    reverse: bool,
) -> Result<Vec<Var>> {
    let steps = g.shape(inputs)[0];
    let mut h = g.constant(Tensor::zeros(&[1, p.hidden_dim]));
    let mut states = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let x = g.row(inputs, t)?;
        h = gru_cell(g, x, h, p)?;
        states[t] = h;
    }
    Ok(states)
}

/// Bidirectional encoding of a sequence.
#[derive(Clone, Copy, Debug)]
pub struct BiEncoding {
    /// `[T, 2d]`, row `t` = `[forward_t, backward_t]`.
    pub states: Var,
    /// `[1, 2d]` = `[forward_{T-1}, backward_0]`.
    pub terminal: Var,
}

/// Bidirectional GRU over the rows of an input matrix, zero initial states.
pub fn bidir_encode_rows<T: Scalar>(
    g: &mut Graph<'_, T>,
    inputs: Var,
    fwd: &GruParams,
    bwd: &GruParams,
) -> Result<BiEncoding> {
    let fs = gru_unroll(g, inputs, fwd, false)?;
    let bs = gru_unroll(g, inputs, bwd, true)?;
    let f = g.concat(&fs, 0)?;
    let b = g.concat(&bs, 0)?;
    let states = g.concat_last(&[f, b])?;
    let terminal = g.concat_last(&[*fs.last().expect("non-empty"), bs[0]])?;
    Ok(BiEncoding { states, terminal })
}

/// Embeds `token_ids` and encodes them bidirectionally.
pub fn bidir_encode<T: Scalar>(
    g: &mut Graph<'_, T>,
    token_ids: &[usize],
    embeddings: ParamId,
    fwd: &GruParams,
    bwd: &GruParams,
) -> Result<BiEncoding> {
    if token_ids.is_empty() {
        return Err(Error::EmptyInput("bidir_encode"));
    }
    let table = g.param(embeddings);
    let emb = g.gather_rows(table, token_ids)?;
    bidir_encode_rows(g, emb, fwd, bwd)
}

/// Additive attention `e_i = v · tanh(s W_q + H_i U_k + b)`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_query: ParamId,
    pub u_keys: ParamId,
    pub v_energy: ParamId,
    pub b: ParamId,
    pub query_dim: usize,
    pub key_dim: usize,
    pub energy_dim: usize,
}

impl AttentionParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        query_dim: usize,
        key_dim: usize,
        energy_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AttentionParams {
            w_query: store.add_init(format!("{prefix}.w_query"), &[query_dim, energy_dim], rng)?,
            u_keys: store.add_init(format!("{prefix}.u_keys"), &[key_dim, energy_dim], rng)?,
            v_energy: store.add_init(format!("{prefix}.v_energy"), &[energy_dim, 1], rng)?,
            b: store.add_init(format!("{prefix}.b"), &[1, energy_dim], rng)?,
            query_dim,
            key_dim,
            energy_dim,
        })
    }

    pub fn num_params(query_dim: usize, key_dim: usize, energy_dim: usize) -> usize {
        query_dim * energy_dim + key_dim * energy_dim + 2 * energy_dim
    }
}

/// Encoder states with their key projection `H U_k + b` computed once.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMemory {
    pub states: Var,
    pub keys: Var,
}

pub fn prepare_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    states: Var,
    p: &AttentionParams,
) -> Result<AttentionMemory> {
    if g.shape(states).len() != 2 || g.shape(states)[1] != p.key_dim {
        return Err(Error::shape(
            "attention keys",
            g.shape(states),
            &[0, p.key_dim],
        ));
    }
    let u = g.param(p.u_keys);
    let b = g.param(p.b);
    let proj = g.matmul(states, u)?;
    let keys = g.add_row(proj, b)?;
    Ok(AttentionMemory { states, keys })
}

/// Attention read over prepared memory. Returns `(context [1, k], weights [T, 1])`.
pub fn attend_prepared<T: Scalar>(
    g: &mut Graph<'_, T>,
    query: Var,
    mem: &AttentionMemory,
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    let wq = g.param(p.w_query);
    let v = g.param(p.v_energy);
    let q = g.matmul(query, wq)?;
    let pre = g.add_row(mem.keys, q)?;
    let act = g.tanh(pre);
    let energies = g.matmul(act, v)?;
    let alpha = g.softmax(energies, 0)?;
    let alpha_t = g.transpose(alpha)?;
    let context = g.matmul(alpha_t, mem.states)?;
    Ok((context, alpha))
}

pub fn attend<T: Scalar>(
    g: &mut Graph<'_, T>,
    query: Var,
    states: Var,
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    let mem = prepare_attention(g, states, p)?;
    attend_prepared(g, query, &mem, p)
}

/// Concatenates per-modality contexts in the given (fixed) modality order.
pub fn combine_concat<T: Scalar>(g: &mut Graph<'_, T>, contexts: &[Var]) -> Result<Var> {
    match contexts {
        [] => Err(Error::EmptyInput("combine_concat")),
        [c] => Ok(*c),
        cs => g.concat_last(cs),
    }
}

/// Second-level attention over modalities.
#[derive(Clone, Debug)]
pub struct HierarchicalParams {
    /// `U_c^(k)`: context projection of each modality into the fused space.
    pub context_proj: Vec<ParamId>,
    /// β-attention weights; absent with a single modality, where β ≡ 1.
    pub energy: Option<ModalityEnergy>,
    pub fused_dim: usize,
}

#[derive(Clone, Debug)]
pub struct ModalityEnergy {
    /// `W_b`, shared query projection.
    pub w_query: ParamId,
    /// `U_b^(k)`, per-modality key projections.
    pub key_proj: Vec<ParamId>,
    /// `v_b`
    pub v_energy: ParamId,
}

impl HierarchicalParams {
    /// `names` label each modality (parameter names use `{prefix}.{name}.…`).
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        names: &[&str],
        context_dims: &[usize],
        query_dim: usize,
        fused_dim: usize,
        energy_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if names.is_empty() || names.len() != context_dims.len() {
            return Err(Error::InvalidArgument(
                "hierarchical combination needs one name per context".into(),
            ));
        }
        let mut context_proj = Vec::new();
        for (name, &dim) in names.iter().zip(context_dims) {
            context_proj.push(store.add_init(
                format!("{prefix}.{name}.proj"),
                &[dim, fused_dim],
                rng,
            )?);
        }
        let energy = if names.len() > 1 {
            let w_query =
                store.add_init(format!("{prefix}.w_query"), &[query_dim, energy_dim], rng)?;
            let mut key_proj = Vec::new();
            for (name, &dim) in names.iter().zip(context_dims) {
                key_proj.push(store.add_init(
                    format!("{prefix}.{name}.key"),
                    &[dim, energy_dim],
                    rng,
                )?);
            }
            let v_energy = store.add_init(format!("{prefix}.v_energy"), &[energy_dim, 1], rng)?;
            Some(ModalityEnergy {
                w_query,
                key_proj,
                v_energy,
            })
        } else {
            None
        };
        Ok(HierarchicalParams {
            context_proj,
            energy,
            fused_dim,
        })
    }

    pub fn num_params(
        context_dims: &[usize],
        query_dim: usize,
        fused_dim: usize,
        energy_dim: usize,
    ) -> usize {
        let proj: usize = context_dims.iter().map(|d| d * fused_dim).sum();
        if context_dims.len() > 1 {
            let keys: usize = context_dims.iter().map(|d| d * energy_dim).sum();
            proj + keys + query_dim * energy_dim + energy_dim
        } else {
            proj
        }
    }
}

/// `e_k = v_b · tanh(s W_b + c_k U_b^(k))`, `β = softmax(e)`,
/// `out = Σ_k β_k · c_k U_c^(k)`. Returns `(out [1, f], β [K, 1])`.
pub fn combine_hierarchical<T: Scalar>(
    g: &mut Graph<'_, T>,
    contexts: &[Var],
    query: Var,
    p: &HierarchicalParams,
) -> Result<(Var, Var)> {
    if contexts.is_empty() {
        return Err(Error::EmptyInput("combine_hierarchical"));
    }
    if contexts.len() != p.context_proj.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} contexts, got {}",
            p.context_proj.len(),
            contexts.len()
        )));
    }
    let mut projected = Vec::with_capacity(contexts.len());
    for (&c, &u) in contexts.iter().zip(&p.context_proj) {
        let u = g.param(u);
        projected.push(g.matmul(c, u)?);
    }
    let Some(energy) = &p.energy else {
        let beta = g.constant(Tensor::full(&[1, 1], T::one()));
        return Ok((projected[0], beta));
    };
    let wq = g.param(energy.w_query);
    let v = g.param(energy.v_energy);
    let q = g.matmul(query, wq)?;
    let mut energies = Vec::with_capacity(contexts.len());
    for (&c, &ub) in contexts.iter().zip(&energy.key_proj) {
        let ub = g.param(ub);
        let k = g.matmul(c, ub)?;
        let pre = g.add(q, k)?;
        let act = g.tanh(pre);
        energies.push(g.matmul(act, v)?);
    }
    let e = g.concat(&energies, 0)?;
    let beta = g.softmax(e, 0)?;
    let stacked = g.concat(&projected, 0)?;
    let beta_t = g.transpose(beta)?;
    let out = g.matmul(beta_t, stacked)?;
    Ok((out, beta))
}

/// How per-modality contexts become the decoder's fused context.
#[derive(Clone, Debug)]
pub enum Combiner {
    Concat,
    Hierarchical(HierarchicalParams),
}

impl Combiner {
    pub fn combine<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        contexts: &[Var],
        query: Var,
    ) -> Result<(Var, Option<Var>)> {
        match self {
            Combiner::Concat => Ok((combine_concat(g, contexts)?, None)),
            Combiner::Hierarchical(p) => {
                let (out, beta) = combine_hierarchical(g, contexts, query, p)?;
                Ok((out, Some(beta)))
            }
        }
    }
}

/// Conditional GRU decoder transition: GRU → attention read → GRU.
#[derive(Clone, Debug)]
pub struct CondGruParams {
    pub first: GruParams,
    pub second: GruParams,
    /// One attention per source modality, in modality order.
    pub attention: Vec<AttentionParams>,
    pub combiner: Combiner,
}

#[derive(Clone, Debug)]
pub struct CondGruOutput {
    pub state: Var,
    pub fused: Var,
    pub alphas: Vec<Var>,
    pub beta: Option<Var>,
}

pub fn cond_gru_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    y_prev: Var,
    s_prev: Var,
    sources: &[AttentionMemory],
    p: &CondGruParams,
) -> Result<CondGruOutput> {
    if sources.is_empty() {
        return Err(Error::EmptyInput("cond_gru_step sources"));
    }
    if sources.len() != p.attention.len() {
        return Err(Error::InvalidArgument(format!(
            "decoder has {} attentions but {} sources were given",
            p.attention.len(),
            sources.len()
        )));
    }
    let s_mid = gru_cell(g, y_prev, s_prev, &p.first)?;
    let mut contexts = Vec::with_capacity(sources.len());
    let mut alphas = Vec::with_capacity(sources.len());
    for (mem, att) in sources.iter().zip(&p.attention) {
        let (c, a) = attend_prepared(g, s_mid, mem, att)?;
        contexts.push(c);
        alphas.push(a);
    }
    let (fused, beta) = p.combiner.combine(g, &contexts, s_mid)?;
    let state = gru_cell(g, fused, s_mid, &p.second)?;
    Ok(CondGruOutput {
        state,
        fused,
        alphas,
        beta,
    })
}
