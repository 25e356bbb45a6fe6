//! Serial bottleneck adapters and per-layer adapter stacks.
//!
//! An adapter holds one (down, up) projection pair per encoder layer it
//! serves and computes `up(relu(down(h))) + r` — bias-free, so a fresh
//! adapter (zero up-projection) is an exact identity on its residual input.
//! A stack composes an optional language adapter below an optional task
//! adapter; the language adapter's output feeds the task adapter as both
//! hidden input and residual.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::string::ToString;
use alloc::vec::Vec;

/// Standard deviation for fresh down-projection weights.
pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Language,
    Task,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Language => "language",
            Role::Task => "task",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adapter {
    pub role: Role,
    /// Language code or task name this adapter belongs to.
    pub tag: String,
    pub hidden: usize,
    pub bottleneck: usize,
    /// One [hidden, bottleneck] matrix per served layer.
    pub down: Vec<Tensor>,
    /// One [bottleneck, hidden] matrix per served layer.
    pub up: Vec<Tensor>,
}

impl Adapter {
    /// Fresh adapter: down ~ N(0, 0.02), up = 0, so it is an exact identity.
    pub fn fresh(
        role: Role,
        tag: &str,
        hidden: usize,
        reduction: usize,
        n_layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if reduction == 0 || hidden == 0 || n_layers == 0 {
            return Err(Error::Config(format!(
                "adapter `{tag}`: hidden={hidden}, reduction={reduction}, n_layers={n_layers} must all be positive"
            )));
        }
        if hidden % reduction != 0 {
            return Err(Error::Config(format!(
                "adapter `{tag}`: hidden {hidden} not divisible by reduction {reduction}"
            )));
        }
        let d = hidden / reduction;
        let mut down = Vec::with_capacity(n_layers);
        let mut up = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            down.push(Tensor::randn(&[hidden, d], INIT_STD, rng));
            up.push(Tensor::zeros(&[d, hidden]));
        }
        Ok(Adapter { role, tag: tag.to_string(), hidden, bottleneck: d, down, up })
    }

    pub fn n_layers(&self) -> usize {
        self.down.len()
    }

    /// Total trainable values: Σ_l 2·hidden·bottleneck.
    pub fn param_count(&self) -> usize {
        self.down.iter().map(Tensor::numel).sum::<usize>()
            + self.up.iter().map(Tensor::numel).sum::<usize>()
    }

    /// Stable (name, tensor) listing for checkpoints and optimizer keying.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.down.len());
        for (l, t) in self.down.iter().enumerate() {
            out.push((format!("down.{l}"), t));
        }
        for (l, t) in self.up.iter().enumerate() {
            out.push((format!("up.{l}"), t));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(2 * self.down.len());
        for (l, t) in self.down.iter_mut().enumerate() {
            out.push((format!("down.{l}"), t));
        }
        for (l, t) in self.up.iter_mut().enumerate() {
            out.push((format!("up.{l}"), t));
        }
        out
    }

    /// Register this adapter's tensors on a graph. `trainable` decides whether
    /// gradients will flow into them.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundAdapter> {
        let mut down = Vec::with_capacity(self.down.len());
        let mut up = Vec::with_capacity(self.up.len());
        for t in &self.down {
            down.push(if trainable { g.leaf(t.clone())? } else { g.constant(t.clone())? });
        }
        for t in &self.up {
            up.push(if trainable { g.leaf(t.clone())? } else { g.constant(t.clone())? });
        }
        Ok(BoundAdapter { down, up, tag: self.tag.clone() })
    }

    /// Bitwise equality of all weights (roles and tags not compared).
    pub fn bits_eq(&self, other: &Adapter) -> bool {
        self.down.len() == other.down.len()
            && self.up.len() == other.up.len()
            && self.down.iter().zip(&other.down).all(|(a, b)| a.bitwise_eq(b))
            && self.up.iter().zip(&other.up).all(|(a, b)| a.bitwise_eq(b))
    }
}

/// An adapter's tensors registered on a specific graph.
#[derive(Debug, Clone)]
pub struct BoundAdapter {
    pub down: Vec<NodeId>,
    pub up: Vec<NodeId>,
    tag: String,
}

impl BoundAdapter {
    /// `up_l(relu(down_l(h))) + r` for layer `l`; h and r are [n, hidden].
    pub fn apply(&self, g: &mut Graph, l: usize, h: NodeId, r: NodeId) -> Result<NodeId> {
        if l >= self.down.len() {
            return Err(Error::Config(format!(
                "adapter `{}` serves {} layers but layer {l} was requested",
                self.tag,
                self.down.len()
            )));
        }
        let z = g.matmul(h, self.down[l])?;
        let a = g.relu(z)?;
        let u = g.matmul(a, self.up[l])?;
        g.add(u, r)
    }
}

/// Bottleneck transform of a single adapter outside any training graph.
pub fn adapter_forward(a: &Adapter, l: usize, h_l: &Tensor, r_l: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let h = g.constant(h_l.clone())?;
    let r = g.constant(r_l.clone())?;
    let bound = a.bind(&mut g, false)?;
    let out = bound.apply(&mut g, l, h, r)?;
    Ok(g.value(out).clone())
}

/// Per-layer adapter chain: optional language adapter below an optional task
/// adapter, with the last encoder layer optionally left adapter-free.
#[derive(Debug, Clone, Copy)]
pub struct AdapterStack<'a> {
    pub la: Option<&'a Adapter>,
    pub ta: Option<&'a Adapter>,
    pub drop_last_layer: bool,
}

impl<'a> AdapterStack<'a> {
    pub fn none() -> Self {
        AdapterStack { la: None, ta: None, drop_last_layer: true }
    }

    pub fn la_only(la: &'a Adapter, drop_last_layer: bool) -> Self {
        AdapterStack { la: Some(la), ta: None, drop_last_layer }
    }

    pub fn full(la: &'a Adapter, ta: &'a Adapter, drop_last_layer: bool) -> Self {
        AdapterStack { la: Some(la), ta: Some(ta), drop_last_layer }
    }

    /// Replace the language adapter, leaving the task adapter untouched.
    /// Returns a new stack; `self` is unmodified.
    pub fn swap_la(&self, new_la: &'a Adapter) -> Result<AdapterStack<'a>> {
        if new_la.role != Role::Language {
            return Err(Error::Config(format!(
                "swap_la expects a language adapter, got a {} adapter `{}`",
                new_la.role.as_str(),
                new_la.tag
            )));
        }
        // Validate geometry against whichever adapter is present.
        if let Some(old) = self.la {
            if new_la.bottleneck != old.bottleneck || new_la.n_layers() != old.n_layers() {
                return Err(Error::Config(format!(
                    "swap_la: `{}` has bottleneck {} over {} layers; expected {} over {}",
                    new_la.tag,
                    new_la.bottleneck,
                    new_la.n_layers(),
                    old.bottleneck,
                    old.n_layers()
                )));
            }
        } else if let Some(ta) = self.ta {
            if new_la.n_layers() != ta.n_layers() || new_la.hidden != ta.hidden {
                return Err(Error::Config(format!(
                    "swap_la: `{}` serves {} layers at hidden {}; the stack's task adapter expects {} at {}",
                    new_la.tag,
                    new_la.n_layers(),
                    new_la.hidden,
                    ta.n_layers(),
                    ta.hidden
                )));
            }
        }
        Ok(AdapterStack { la: Some(new_la), ta: self.ta, drop_last_layer: self.drop_last_layer })
    }

    pub fn bind(&self, g: &mut Graph, la_trainable: bool, ta_trainable: bool) -> Result<BoundStack> {
        Ok(BoundStack {
            la: self.la.map(|a| a.bind(g, la_trainable)).transpose()?,
            ta: self.ta.map(|a| a.bind(g, ta_trainable)).transpose()?,
            drop_last_layer: self.drop_last_layer,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BoundStack {
    pub la: Option<BoundAdapter>,
    pub ta: Option<BoundAdapter>,
    pub drop_last_layer: bool,
}

impl BoundStack {
    /// Apply the chain at encoder layer `l` of `n_layers_total`: language
    /// adapter first (hidden h, residual r), its output feeding the task
    /// adapter as both hidden and residual. With no adapters — or at the last
    /// layer when `drop_last_layer` is set — returns `r` unchanged.
    pub fn apply(
        &self,
        g: &mut Graph,
        l: usize,
        n_layers_total: usize,
        h: NodeId,
        r: NodeId,
    ) -> Result<NodeId> {
        if self.drop_last_layer && l + 1 == n_layers_total {
            return Ok(r);
        }
        let mut cur = r;
        let mut hidden = h;
        if let Some(la) = &self.la {
            cur = la.apply(g, l, hidden, cur)?;
            hidden = cur;
        }
        if let Some(ta) = &self.ta {
            cur = ta.apply(g, l, hidden, cur)?;
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::bits_eq;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    fn hand_adapter() -> Adapter {
        // hidden 2, bottleneck 1: down [[0.5],[0.5]], up [[1,-1]].
        Adapter {
            role: Role::Language,
            tag: "hand".to_string(),
            hidden: 2,
            bottleneck: 1,
            down: alloc::vec![t(&[2, 1], &[0.5, 0.5])],
            up: alloc::vec![t(&[1, 2], &[1.0, -1.0])],
        }
    }

    #[test]
    fn fresh_adapter_is_exact_identity() {
        let mut rng = Rng::new(7);
        let a = Adapter::fresh(Role::Language, "xx", 8, 2, 3, &mut rng).unwrap();
        let h = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let r = Tensor::randn(&[4, 8], 1.0, &mut rng);
        for l in 0..3 {
            let out = adapter_forward(&a, l, &h, &r).unwrap();
            assert!(out.bitwise_eq(&r), "layer {l}");
        }
    }

    #[test]
    fn negative_bottleneck_preactivation_passes_residual() {
        // down·h = −0.5 → relu 0 → up gives [0,0] → output is the residual.
        let a = hand_adapter();
        let out = adapter_forward(&a, 0, &t(&[1, 2], &[1.0, -2.0]), &t(&[1, 2], &[1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0]);
    }

    #[test]
    fn positive_bottleneck_hand_computation() {
        // down·h = 2 → up gives [2,−2]; residual zero.
        let a = hand_adapter();
        let out = adapter_forward(&a, 0, &t(&[1, 2], &[2.0, 2.0]), &t(&[1, 2], &[0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[2.0, -2.0]);
    }

    #[test]
    fn param_count_is_two_h_d_per_layer() {
        let mut rng = Rng::new(1);
        let a = Adapter::fresh(Role::Task, "ner", 64, 16, 4, &mut rng).unwrap();
        assert_eq!(a.param_count(), 4 * 2 * 64 * 4);
        assert_eq!(a.bottleneck, 4);
    }

    #[test]
    fn fresh_is_deterministic_per_seed() {
        let a = Adapter::fresh(Role::Language, "xx", 16, 2, 2, &mut Rng::new(5)).unwrap();
        let b = Adapter::fresh(Role::Language, "xx", 16, 2, 2, &mut Rng::new(5)).unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn indivisible_reduction_is_rejected() {
        let mut rng = Rng::new(1);
        assert!(Adapter::fresh(Role::Language, "xx", 10, 3, 2, &mut rng).is_err());
        assert!(Adapter::fresh(Role::Language, "xx", 10, 0, 2, &mut rng).is_err());
    }

    #[test]
    fn layer_out_of_range_is_a_config_error() {
        let mut rng = Rng::new(2);
        let a = Adapter::fresh(Role::Language, "xx", 4, 2, 2, &mut rng).unwrap();
        let h = Tensor::zeros(&[1, 4]);
        let err = adapter_forward(&a, 2, &h, &h).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn empty_stack_passes_residual_through() {
        let mut g = Graph::new();
        let mut rng = Rng::new(3);
        let h = g.constant(Tensor::randn(&[2, 4], 1.0, &mut rng)).unwrap();
        let rt = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let r = g.constant(rt.clone()).unwrap();
        let stack = AdapterStack::none().bind(&mut g, false, false).unwrap();
        let out = stack.apply(&mut g, 0, 4, h, r).unwrap();
        assert!(g.value(out).bitwise_eq(&rt));
    }

    #[test]
    fn drop_last_layer_ignores_adapter_weights() {
        let mut rng = Rng::new(4);
        let mut la = Adapter::fresh(Role::Language, "xx", 4, 2, 4, &mut rng).unwrap();
        let mut ta = Adapter::fresh(Role::Task, "t", 4, 2, 4, &mut rng).unwrap();
        // Give both adapters aggressively non-identity weights.
        for t in la.up.iter_mut().chain(ta.up.iter_mut()) {
            for v in t.data_mut() {
                *v = 9.0;
            }
        }
        let mut g = Graph::new();
        let h = g.constant(Tensor::randn(&[2, 4], 1.0, &mut rng)).unwrap();
        let rt = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let r = g.constant(rt.clone()).unwrap();
        let stack = AdapterStack::full(&la, &ta, true).bind(&mut g, false, false).unwrap();
        let out = stack.apply(&mut g, 3, 4, h, r).unwrap();
        assert!(g.value(out).bitwise_eq(&rt));
    }

    #[test]
    fn fresh_la_and_ta_compose_to_identity() {
        let mut rng = Rng::new(5);
        let la = Adapter::fresh(Role::Language, "xx", 8, 2, 2, &mut rng).unwrap();
        let ta = Adapter::fresh(Role::Task, "t", 8, 4, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let h = g.constant(Tensor::randn(&[3, 8], 1.0, &mut rng)).unwrap();
        let rt = Tensor::randn(&[3, 8], 1.0, &mut rng);
        let r = g.constant(rt.clone()).unwrap();
        let stack = AdapterStack::full(&la, &ta, true).bind(&mut g, false, false).unwrap();
        let out = stack.apply(&mut g, 0, 4, h, r).unwrap();
        assert!(g.value(out).bitwise_eq(&rt));
    }

    #[test]
    fn stack_applies_la_below_ta_with_la_output_as_ta_residual() {
        let mut rng = Rng::new(6);
        let mut la = Adapter::fresh(Role::Language, "xx", 4, 2, 1, &mut rng).unwrap();
        let mut ta = Adapter::fresh(Role::Task, "t", 4, 2, 1, &mut rng).unwrap();
        for t in la.up.iter_mut().chain(ta.up.iter_mut()) {
            let mut r = Rng::new(99);
            for v in t.data_mut() {
                *v = (r.normal() * 0.5) as f32;
            }
        }
        let h = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let r = Tensor::randn(&[2, 4], 1.0, &mut rng);
        // Manual composition through the standalone forward.
        let la_out = adapter_forward(&la, 0, &h, &r).unwrap();
        let expect = adapter_forward(&ta, 0, &la_out, &la_out).unwrap();
        // Stack composition.
        let mut g = Graph::new();
        let hn = g.constant(h).unwrap();
        let rn = g.constant(r).unwrap();
        let stack = AdapterStack::full(&la, &ta, true).bind(&mut g, false, false).unwrap();
        let out = stack.apply(&mut g, 0, 2, hn, rn).unwrap();
        assert!(g.value(out).bitwise_eq(&expect));
    }

    #[test]
    fn swap_la_replaces_la_and_preserves_ta() {
        let mut rng = Rng::new(7);
        let la1 = Adapter::fresh(Role::Language, "aa", 4, 2, 2, &mut rng).unwrap();
        let la2 = Adapter::fresh(Role::Language, "bb", 4, 2, 2, &mut rng).unwrap();
        let ta = Adapter::fresh(Role::Task, "t", 4, 4, 2, &mut rng).unwrap();
        let ta_before = ta.clone();
        let stack = AdapterStack::full(&la1, &ta, true);
        let swapped = stack.swap_la(&la2).unwrap();
        assert_eq!(swapped.la.unwrap().tag, "bb");
        assert!(swapped.ta.unwrap().bits_eq(&ta_before));
        // Swapping back restores the original composition bitwise.
        let back = swapped.swap_la(&la1).unwrap();
        let mut rng2 = Rng::new(8);
        let h = Tensor::randn(&[2, 4], 1.0, &mut rng2);
        let r = Tensor::randn(&[2, 4], 1.0, &mut rng2);
        let run = |s: &AdapterStack<'_>| {
            let mut g = Graph::new();
            let hn = g.constant(h.clone()).unwrap();
            let rn = g.constant(r.clone()).unwrap();
            let b = s.bind(&mut g, false, false).unwrap();
            let out = b.apply(&mut g, 0, 2, hn, rn).unwrap();
            g.value(out).clone()
        };
        assert!(run(&stack).bitwise_eq(&run(&back)));
    }

    #[test]
    fn swap_la_rejects_mismatched_geometry() {
        let mut rng = Rng::new(9);
        let la = Adapter::fresh(Role::Language, "aa", 4, 2, 2, &mut rng).unwrap();
        let wrong_d = Adapter::fresh(Role::Language, "bb", 4, 4, 2, &mut rng).unwrap();
        let wrong_layers = Adapter::fresh(Role::Language, "cc", 4, 2, 3, &mut rng).unwrap();
        let as_task = Adapter::fresh(Role::Task, "dd", 4, 2, 2, &mut rng).unwrap();
        let stack = AdapterStack::la_only(&la, true);
        assert!(stack.swap_la(&wrong_d).is_err());
        assert!(stack.swap_la(&wrong_layers).is_err());
        assert!(stack.swap_la(&as_task).is_err());
    }

    #[test]
    fn gradients_flow_through_down_up_and_residual() {
        let mut rng = Rng::new(10);
        let mut a = Adapter::fresh(Role::Language, "xx", 4, 2, 1, &mut rng).unwrap();
        // Non-zero up so the bottleneck path is live; positive down bias via
        // large positive hidden input so relu is active.
        for v in a.up[0].data_mut() {
            *v = 0.3;
        }
        let mut g = Graph::new();
        let h = g.constant(Tensor::full(&[1, 4], 2.0)).unwrap();
        let r = g.leaf(Tensor::zeros(&[1, 4])).unwrap();
        let bound = a.bind(&mut g, true).unwrap();
        let out = bound.apply(&mut g, 0, h, r).unwrap();
        let loss = g.sum(out).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(bound.down[0]).is_some());
        assert!(g.grad(bound.up[0]).unwrap().iter().any(|&v| v != 0.0));
        // Residual path: gradient of sum wrt r is all ones.
        assert!(bits_eq(g.grad(r).unwrap(), &[1.0; 4]));
    }
}
