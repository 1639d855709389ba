use super::graph::{Graph, SparseAdjacency, Var};
use super::params::{glorot_uniform, Bound, ParamId, ParamSet};
use super::{NnError, Tensor};
use rand::Rng;
use std::sync::Arc;

/// Symmetric-normalized adjacency `D^-1/2 (A + I) D^-1/2` of an undirected
/// graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    dense: Tensor,
    sparse: Arc<SparseAdjacency>,
}

impl AdjacencyMatrix {
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Result<Self, NnError> {
        if nodes == 0 {
            return Err(NnError::Shape("graph needs at least one node".into()));
        }
        let mut a = vec![0.0; nodes * nodes];
        for i in 0..nodes {
            a[i * nodes + i] = 1.0;
        }
        for &(u, v) in edges {
            if u >= nodes || v >= nodes || u == v {
                return Err(NnError::Shape(format!("bad edge ({u}, {v}) for {nodes} nodes")));
            }
            a[u * nodes + v] = 1.0;
            a[v * nodes + u] = 1.0;
        }
        let inv_sqrt_deg: Vec<f64> = (0..nodes)
            .map(|i| 1.0 / a[i * nodes..(i + 1) * nodes].iter().sum::<f64>().sqrt())
            .collect();
        for r in 0..nodes {
            for c in 0..nodes {
                a[r * nodes + c] *= inv_sqrt_deg[r] * inv_sqrt_deg[c];
            }
        }
        let dense = Tensor::new(&[nodes, nodes], a)?;
        let sparse = Arc::new(SparseAdjacency::from_dense(&dense)?);
        Ok(Self {
            nodes,
            edges: edges.to_vec(),
            dense,
            sparse,
        })
    }

    /// Self-loops only; the spatial step becomes a per-node linear map.
    pub fn identity(nodes: usize) -> Result<Self, NnError> {
        Self::from_edges(nodes, &[])
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn dense(&self) -> &Tensor {
        &self.dense
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.dense.data()[r * self.nodes + c]
    }

    pub(crate) fn sparse(&self) -> &Arc<SparseAdjacency> {
        &self.sparse
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let w = params.add(
            format!("{name}.w"),
            glorot_uniform(rng, &[inputs, outputs], inputs, outputs),
            true,
        )?;
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[outputs]), true)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, NnError> {
        let y = g.matmul(x, p[self.w])?;
        g.add_bias(y, p[self.b])
    }
}

/// One gated recurrent update. `w` is `[inputs + hidden, 4·hidden]` with gate
/// blocks ordered input, forget, candidate, output.
pub fn lstm_cell(
    g: &mut Graph,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    w: Var,
    b: Var,
    hidden: usize,
) -> Result<(Var, Var), NnError> {
    let xh = g.concat(&[x_t, h_prev])?;
    let z = g.matmul(xh, w)?;
    let z = g.add_bias(z, b)?;
    let i = g.slice_last(z, 0, hidden)?;
    let f = g.slice_last(z, hidden, hidden)?;
    let cand = g.slice_last(z, 2 * hidden, hidden)?;
    let o = g.slice_last(z, 3 * hidden, hidden)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let w = params.add(
            format!("{name}.w"),
            glorot_uniform(rng, &[inputs + hidden, 4 * hidden], inputs + hidden, hidden),
            true,
        )?;
        // forget gate starts open
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = params.add(format!("{name}.b"), Tensor::from_vec(bias), true)?;
        Ok(Self { w, b, inputs, hidden })
    }

    /// Runs over a sequence of `[B, inputs]` steps from a zero state and
    /// returns the hidden state of every step.
    pub fn forward(&self, g: &mut Graph, p: &Bound, steps: &[Var]) -> Result<Vec<Var>, NnError> {
        let Some(&first) = steps.first() else {
            return Ok(Vec::new());
        };
        let batch = g.value(first).shape()[0];
        let mut h = g.constant(Tensor::zeros(&[batch, self.hidden]))?;
        let mut c = h;
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            (h, c) = lstm_cell(g, x, h, c, p[self.w], p[self.b], self.hidden)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Spatial graph convolution followed by a same-padded temporal
/// convolution: `act(tconv(Â · X · W_s) + b)`.
#[derive(Debug, Clone, Copy)]
pub struct StgcnLayer {
    pub spatial: ParamId,
    pub temporal: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
}

impl StgcnLayer {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        relu: bool,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if kernel % 2 == 0 {
            return Err(NnError::Shape(format!("temporal kernel must be odd, got {kernel}")));
        }
        let spatial = params.add(
            format!("{name}.spatial"),
            glorot_uniform(rng, &[inputs, outputs], inputs, outputs),
            true,
        )?;
        let temporal = params.add(
            format!("{name}.temporal"),
            glorot_uniform(rng, &[kernel, outputs, outputs], kernel * outputs, outputs),
            true,
        )?;
        let bias = params.add(format!("{name}.b"), Tensor::zeros(&[outputs]), true)?;
        Ok(Self {
            spatial,
            temporal,
            bias,
            inputs,
            outputs,
            relu,
        })
    }

    /// `x` is `[B, T, V, inputs]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, adj: &AdjacencyMatrix) -> Result<Var, NnError> {
        // Â and W_s act on different axes and commute; mix on the narrower side.
        let y = if self.inputs <= self.outputs {
            let m = g.graph_mix(x, adj.sparse())?;
            g.matmul(m, p[self.spatial])?
        } else {
            let m = g.matmul(x, p[self.spatial])?;
            g.graph_mix(m, adj.sparse())?
        };
        let y = g.temporal_conv(y, p[self.temporal])?;
        let y = g.add_bias(y, p[self.bias])?;
        if self.relu {
            g.relu(y)
        } else {
            Ok(y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_state() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap()).unwrap();
        let h = g.constant(Tensor::zeros(&[1, 4])).unwrap();
        let w = g.constant(Tensor::zeros(&[7, 16])).unwrap();
        let b = g.constant(Tensor::zeros(&[16])).unwrap();
        let (h1, c1) = lstm_cell(&mut g, x, h, h, w, b, 4).unwrap();
        assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_sequence_keeps_zero_trajectory() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = LstmLayer::new(&mut ps, "l", 3, 4, &mut rng).unwrap();
        for p in ps.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let bound = ps.bind(&mut g).unwrap();
        let steps: Vec<Var> = (0..5)
            .map(|_| g.constant(Tensor::zeros(&[2, 3])).unwrap())
            .collect();
        let hs = layer.forward(&mut g, &bound, &steps).unwrap();
        for h in hs {
            assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_adjacency_is_per_node_linear() {
        let adj = AdjacencyMatrix::identity(3).unwrap();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = StgcnLayer::new(&mut ps, "s", 2, 2, 1, false, &mut rng).unwrap();
        let ws = ps.get(layer.spatial).value.clone();
        let wt = ps.get(layer.temporal).value.clone();
        let x = Tensor::new(&[1, 1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut g = Graph::new();
        let bound = ps.bind(&mut g).unwrap();
        let xv = g.constant(x.clone()).unwrap();
        let y = layer.forward(&mut g, &bound, xv, &adj).unwrap();
        // node n output = x[n] · Ws · Wt[0]
        for n in 0..3 {
            let xn = &x.data()[n * 2..n * 2 + 2];
            let mut s = [0.0; 2];
            for o in 0..2 {
                s[o] = xn[0] * ws.data()[o] + xn[1] * ws.data()[2 + o];
            }
            for o in 0..2 {
                let e = s[0] * wt.data()[o] + s[1] * wt.data()[2 + o];
                assert!((g.value(y).data()[n * 2 + o] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalized_adjacency_properties() {
        let adj = AdjacencyMatrix::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!((adj.get(r, c) - adj.get(c, r)).abs() < 1e-15);
                assert!(adj.get(r, c) >= 0.0);
            }
        }
        assert!((adj.get(0, 0) - 0.5).abs() < 1e-15);
        assert!(AdjacencyMatrix::from_edges(3, &[(0, 3)]).is_err());
    }
}
