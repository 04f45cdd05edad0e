//! Directed spatio-temporal hypergraph construction and learning.
//!
//! Nodes are the `N` agents at the current step (ids `0..N`) and the same
//! agents one step earlier (ids `N..2N`). For every master node `i` two
//! directed hyperedges are built:
//!
//! * spatial: tail nodes are current-step nodes `j != i` whose reconstruction
//!   coefficient `p_spa[i](j)` exceeds the threshold `zeta`;
//! * temporal: tail nodes are previous-step nodes with `p_tem[i](j) > zeta`.
//!
//! The head set of an edge groups every master whose tail set (of the same
//! kind) is identical, the master itself included.
//!
//! Coefficients are trained through the reconstruction loss and through the
//! tail entries of the incidence matrix. Set membership itself is a
//! non-differentiable selection made from the current coefficient values.

mod attention;
mod construct;

use alloc::vec::Vec;

use rand::Rng;

pub use attention::{graph_readout, hyperedge_attention, hyperedge_embedding, node_update, HeadOutput};
pub use construct::{
    build_hyperedges, embed_observations, incidence_matrix, incidence_on_tape, reconstruction_loss,
    spatial_reconstruction_errors, temporal_reconstruction_errors, DirectedHyperedge, EdgeKind, IncidenceMatrix,
    TailNode,
};

use crate::matrix::Matrix;
use crate::nn::{NnError, ParamId, ParameterStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DhgError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("degenerate graph: {0}")]
    Degenerate(&'static str),
    #[error("duplicate {kind:?} hyperedge for master {master}")]
    DuplicateEdge { master: usize, kind: EdgeKind },
    #[error("node id {node} out of range for {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("embedding dim {dim} is not divisible by {heads} heads")]
    Heads { dim: usize, heads: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypergraphConfig {
    /// Observation width per agent.
    pub obs_dim: usize,
    /// Node embedding width; also the attention model width.
    pub embed_dim: usize,
    /// Attention heads; must divide `embed_dim`.
    pub heads: usize,
    /// Tail-set threshold on reconstruction coefficients.
    pub zeta: f64,
    /// Weight of the reconstruction errors.
    pub lambda: f64,
    /// Weight of the L2 coefficient penalty.
    pub gamma2: f64,
}

impl Default for HypergraphConfig {
    fn default() -> Self {
        Self { obs_dim: 16, embed_dim: 32, heads: 1, zeta: 0.3, lambda: 0.001, gamma2: 0.2 }
    }
}

impl HypergraphConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), DhgError> {
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(DhgError::Heads { dim: self.embed_dim, heads: self.heads });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub query: ParamId,
    pub key_spa: ParamId,
    pub key_tem: ParamId,
    pub att_spa: ParamId,
    pub att_tem: ParamId,
}

/// Parameter handles of the hypergraph encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct HypergraphEncoder {
    pub cfg: HypergraphConfig,
    pub agents: usize,
    pub w_embed: ParamId,
    pub b_embed: ParamId,
    pub theta_spa: ParamId,
    pub theta_tem: ParamId,
    /// `N x (N-1)`: row `i` holds master `i`'s coefficients over the other nodes in id order.
    pub p_spa: ParamId,
    /// `N x N`: row `i` holds master `i`'s coefficients over previous-step nodes.
    pub p_tem: ParamId,
    pub heads: Vec<HeadParams>,
}

/// Encoder parameters recorded on one tape.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    w_embed: Var,
    b_embed: Var,
    theta_spa: Var,
    theta_tem: Var,
    p_spa: Var,
    p_tem: Var,
    heads: Vec<[Var; 5]>,
}

/// Output of one encoder pass over a state.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Graph readout, `1 x d`.
    pub readout: Var,
    /// Reconstruction loss of this step, `1 x 1`.
    pub recon_loss: Var,
    /// Node embeddings after the attention update, `N x d`.
    pub nodes: Var,
    pub edges: Vec<DirectedHyperedge>,
}

impl HypergraphEncoder {
    /// Registers all encoder parameters under `prefix`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: HypergraphConfig,
        agents: usize,
        rng: &mut R,
    ) -> Result<Self, DhgError> {
        cfg.validate()?;
        if agents < 2 {
            return Err(DhgError::Degenerate("at least two agents are needed for spatial candidates"));
        }
        let d = cfg.embed_dim;
        let dk = cfg.head_dim();
        let name = |s: &str| alloc::format!("{prefix}.{s}");
        let w_embed = store.add_glorot(&name("w_embed"), cfg.obs_dim, d, rng)?;
        let b_embed = store.add_zeros(&name("b_embed"), 1, d)?;
        let theta_spa = store.add_glorot(&name("theta_spa"), d, d, rng)?;
        let theta_tem = store.add_glorot(&name("theta_tem"), d, d, rng)?;
        let p_spa = store.add_uniform(&name("p_spa"), agents, agents - 1, 0.0, 1.0, rng)?;
        let p_tem = store.add_uniform(&name("p_tem"), agents, agents, 0.0, 1.0, rng)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            heads.push(HeadParams {
                query: store.add_glorot(&name(&alloc::format!("head{h}.query")), d, dk, rng)?,
                key_spa: store.add_glorot(&name(&alloc::format!("head{h}.key_spa")), d, dk, rng)?,
                key_tem: store.add_glorot(&name(&alloc::format!("head{h}.key_tem")), d, dk, rng)?,
                att_spa: store.add_glorot(&name(&alloc::format!("head{h}.att_spa")), dk, dk, rng)?,
                att_tem: store.add_glorot(&name(&alloc::format!("head{h}.att_tem")), dk, dk, rng)?,
            });
        }
        Ok(Self { cfg, agents, w_embed, b_embed, theta_spa, theta_tem, p_spa, p_tem, heads })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![self.w_embed, self.b_embed, self.theta_spa, self.theta_tem, self.p_spa, self.p_tem];
        for h in &self.heads {
            ids.extend([h.query, h.key_spa, h.key_tem, h.att_spa, h.att_tem]);
        }
        ids
    }

    pub fn record(&self, tape: &mut Tape, store: &ParameterStore) -> EncoderVars {
        EncoderVars {
            w_embed: tape.param(store, self.w_embed),
            b_embed: tape.param(store, self.b_embed),
            theta_spa: tape.param(store, self.theta_spa),
            theta_tem: tape.param(store, self.theta_tem),
            p_spa: tape.param(store, self.p_spa),
            p_tem: tape.param(store, self.p_tem),
            heads: self
                .heads
                .iter()
                .map(|h| [h.query, h.key_spa, h.key_tem, h.att_spa, h.att_tem].map(|id| tape.param(store, id)))
                .collect(),
        }
    }

    /// Hyperedges implied by the current coefficient values.
    pub fn hyperedges(&self, store: &ParameterStore) -> Vec<DirectedHyperedge> {
        build_hyperedges(store.value(self.p_spa), store.value(self.p_tem), self.cfg.zeta)
    }

    /// Full encoder pass for observations at `t` (`obs`) and `t - 1` (`prev_obs`), both `N x obs_dim`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &EncoderVars,
        obs: &Matrix,
        prev_obs: &Matrix,
    ) -> Result<EncoderOutput, DhgError> {
        let n = self.agents;
        if obs.shape() != (n, self.cfg.obs_dim) || prev_obs.shape() != obs.shape() {
            return Err(NnError::Dimension { op: "encoder input", lhs: obs.shape(), rhs: prev_obs.shape() }.into());
        }
        let o_t = tape.constant(obs.clone());
        let o_p = tape.constant(prev_obs.clone());
        let h_t = embed_observations(tape, o_t, vars.w_embed, vars.b_embed)?;
        let h_p = embed_observations(tape, o_p, vars.w_embed, vars.b_embed)?;

        let c_spa = spatial_reconstruction_errors(tape, h_t, vars.theta_spa, vars.p_spa)?;
        let c_tem = temporal_reconstruction_errors(tape, h_t, h_p, vars.theta_tem, vars.p_tem)?;
        let recon_loss =
            reconstruction_loss(tape, c_spa, c_tem, vars.p_spa, vars.p_tem, self.cfg.lambda, self.cfg.gamma2)?;

        let p_spa = tape.value(vars.p_spa).clone();
        let p_tem = tape.value(vars.p_tem).clone();
        let edges = build_hyperedges(&p_spa, &p_tem, self.cfg.zeta);
        let m = incidence_on_tape(tape, &edges, n, vars.p_spa, vars.p_tem)?;
        let h_all = tape.concat_rows(&[h_t, h_p])?;
        let e = hyperedge_embedding(tape, m, h_all)?;
        let e_spa = tape.slice_rows(e, 0, n)?;
        let e_tem = tape.slice_rows(e, n, n)?;

        let mut outs = Vec::with_capacity(vars.heads.len());
        for [q, ks, kt, a_s, a_t] in &vars.heads {
            outs.push(hyperedge_attention(tape, h_t, e_spa, e_tem, [*q, *ks, *kt, *a_s, *a_t], self.cfg.embed_dim)?);
        }
        let nodes = node_update(tape, &outs)?;
        let readout = graph_readout(tape, nodes)?;
        Ok(EncoderOutput { readout, recon_loss, nodes, edges })
    }
}
