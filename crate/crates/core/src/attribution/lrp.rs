//! Layer-wise relevance propagation.
//!
//! Relevance starts at the target (the selected logit's value, or every
//! activation of an intermediate node) and is redistributed node by node
//! down to the input. Biases keep their share: relevance is never handed to
//! a bias term, so layers with biases leak relevance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttributionMap, Target};
use crate::engine::{forward, linear_geom, Activations};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph, NodeId};
use crate::ops::{self, LinearGeom};
use crate::tensor::Tensor;

/// Denominators smaller than this (with no ε) absorb their relevance.
const ABSORB: f64 = 1e-12;

/// Redistribution rule for a weighted (dense or conv) layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearRule {
    Zero,
    Epsilon { epsilon: f64 },
    Gamma { gamma: f64 },
    Beta { beta: f64 },
    AdaptiveBeta { cap: f64 },
    /// Box-constrained input rule with per-element bounds `low ≤ x ≤ high`.
    ZBox { low: f64, high: f64 },
}

impl LinearRule {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::invalid(format!("LRP {what} must be finite and non-negative, got {v}"));
        match *self {
            LinearRule::Zero => {}
            LinearRule::Epsilon { epsilon } if !(epsilon >= 0.0 && epsilon.is_finite()) => return Err(bad("ε", epsilon)),
            LinearRule::Gamma { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => return Err(bad("γ", gamma)),
            LinearRule::Beta { beta } if !(beta >= 0.0 && beta.is_finite()) => return Err(bad("β", beta)),
            LinearRule::AdaptiveBeta { cap } if !(cap >= 0.0 && cap.is_finite()) => return Err(bad("β cap", cap)),
            LinearRule::ZBox { low, high } if !(low <= high && low.is_finite() && high.is_finite()) => {
                return Err(Error::invalid(format!("z-box bounds need low ≤ high, got [{low}, {high}]")))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Redistribution through average pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolRule {
    /// In proportion to squared activations.
    Squared,
    /// In proportion to activations (LRP-0 through the average).
    Proportional,
}

/// Which closed form turns a neuron's contribution statistics into β.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveVariant {
    /// `β = n / (p + n)`.
    #[default]
    Displayed,
    /// `β = n / (p − n)`, the solution of `β / (1 + β) = n / p`.
    Algebraic,
}

/// Per-conv-layer γ interpolated geometrically from the bottom conv layer
/// to the top one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaDecay {
    pub bottom: f64,
    pub top: f64,
}

impl GammaDecay {
    /// γ for conv layer `k` of `n`, counted from the input.
    pub fn gamma_at(&self, k: usize, n: usize) -> f64 {
        if n <= 1 {
            return self.bottom;
        }
        self.bottom * (self.top / self.bottom).powf(k as f64 / (n - 1) as f64)
    }
}

/// Rule assignment for a whole model.
///
/// Precedence for a weighted layer: a by-name override, then `first` if the
/// layer reads the model input, then `gamma_decay` for conv layers, then
/// `conv` or `dense`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrpConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub first: Option<LinearRule>,
    pub conv: LinearRule,
    pub dense: LinearRule,
    #[serde(default)]
    pub gamma_decay: Option<GammaDecay>,
    pub avg_pool: PoolRule,
    #[serde(default)]
    pub adaptive_variant: AdaptiveVariant,
    #[serde(default)]
    pub overrides: BTreeMap<String, LinearRule>,
}

fn default_name() -> String {
    "lrp".into()
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self::composite()
    }
}

impl LrpConfig {
    fn uniform(name: &str, rule: LinearRule) -> Self {
        Self {
            name: name.into(),
            first: None,
            conv: rule,
            dense: rule,
            gamma_decay: None,
            avg_pool: PoolRule::Proportional,
            adaptive_variant: AdaptiveVariant::Displayed,
            overrides: BTreeMap::new(),
        }
    }

    /// LRP-0 everywhere.
    pub fn zero() -> Self {
        Self::uniform("lrp_0", LinearRule::Zero)
    }

    pub fn epsilon(epsilon: f64) -> Self {
        Self::uniform("lrp_epsilon", LinearRule::Epsilon { epsilon })
    }

    pub fn beta(beta: f64) -> Self {
        Self::uniform("lrp_beta", LinearRule::Beta { beta })
    }

    /// z-box input layer, adaptive β in the remaining weighted layers.
    pub fn adaptive_beta(cap: f64) -> Self {
        Self {
            first: Some(LinearRule::ZBox { low: 0.0, high: 1.0 }),
            avg_pool: PoolRule::Squared,
            ..Self::uniform("lrp_adaptive_beta", LinearRule::AdaptiveBeta { cap })
        }
    }

    /// LRP-β in conv layers and LRP-ε in dense layers.
    pub fn beta_epsilon(beta: f64, epsilon: f64) -> Self {
        Self {
            name: "lrp_beta_epsilon".into(),
            conv: LinearRule::Beta { beta },
            dense: LinearRule::Epsilon { epsilon },
            ..Self::zero()
        }
    }

    /// z-box input layer, LRP-γ decaying from 1.0 to 0.01 across conv
    /// layers, squared-activation pooling, LRP-0 in dense layers.
    pub fn composite() -> Self {
        Self {
            name: "lrp_gamma".into(),
            first: Some(LinearRule::ZBox { low: 0.0, high: 1.0 }),
            conv: LinearRule::Gamma { gamma: 0.25 },
            dense: LinearRule::Zero,
            gamma_decay: Some(GammaDecay { bottom: 1.0, top: 0.01 }),
            avg_pool: PoolRule::Squared,
            adaptive_variant: AdaptiveVariant::Displayed,
            overrides: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> String {
        self.name.clone()
    }

    pub fn validate(&self) -> Result<()> {
        for r in self.first.iter().chain([&self.conv, &self.dense]).chain(self.overrides.values()) {
            r.validate()?;
        }
        if let Some(d) = self.gamma_decay {
            if !(d.bottom > 0.0 && d.top > 0.0 && d.bottom.is_finite() && d.top.is_finite()) {
                return Err(Error::invalid("γ decay endpoints must be positive"));
            }
        }
        Ok(())
    }

    /// Resolved rule for every weighted node of `model`.
    fn resolve(&self, model: &ModelGraph) -> Result<BTreeMap<NodeId, LinearRule>> {
        self.validate()?;
        for name in self.overrides.keys() {
            if model.find(name).is_none_or(|id| !model.node(id).kind().is_linear()) {
                return Err(Error::invalid(format!("LRP override names no weighted layer: '{name}'")));
            }
        }
        let convs: Vec<NodeId> = (0..model.len())
            .filter(|&i| matches!(model.node(i).kind(), LayerKind::Conv2D { .. }))
            .collect();
        let mut out = BTreeMap::new();
        for id in 0..model.len() {
            let node = model.node(id);
            if !node.kind().is_linear() {
                continue;
            }
            let rule = if let Some(r) = self.overrides.get(node.name()) {
                *r
            } else if let (Some(r), true) = (self.first, reads_input(model, id)) {
                r
            } else if let LayerKind::Conv2D { .. } = node.kind() {
                match self.gamma_decay {
                    Some(d) => {
                        let k = convs.iter().position(|&c| c == id).expect("conv listed");
                        LinearRule::Gamma { gamma: d.gamma_at(k, convs.len()) }
                    }
                    None => self.conv,
                }
            } else {
                self.dense
            };
            out.insert(id, rule);
        }
        Ok(out)
    }
}

/// True when the node's data input is the model input, possibly flattened.
fn reads_input(model: &ModelGraph, id: NodeId) -> bool {
    let mut src = model.node(id).inputs()[0];
    while src != 0 {
        let n = model.node(src);
        if *n.kind() != LayerKind::Flatten {
            return false;
        }
        src = n.inputs()[0];
    }
    true
}

/// `β*` from the positive sum `p = Σ(wx)₊` and negative magnitude
/// `n = −Σ(wx)₋`, capped at `cap`.
pub fn adaptive_beta_from_sums(p: f64, n: f64, cap: f64, variant: AdaptiveVariant) -> f64 {
    let beta = match variant {
        AdaptiveVariant::Displayed => {
            if p + n > 0.0 {
                n / (p + n)
            } else {
                0.0
            }
        }
        AdaptiveVariant::Algebraic => {
            if n == 0.0 {
                0.0
            } else if p > n {
                n / (p - n)
            } else {
                f64::INFINITY
            }
        }
    };
    beta.min(cap)
}

/// `β*` for one neuron from its input contributions `w_i x_i`.
pub fn adaptive_beta(contributions: &[f64], cap: f64) -> f64 {
    let p: f64 = contributions.iter().filter(|&&c| c > 0.0).sum();
    let n: f64 = -contributions.iter().filter(|&&c| c < 0.0).sum::<f64>();
    adaptive_beta_from_sums(p, n, cap, AdaptiveVariant::Displayed)
}

/// Relevance bookkeeping from one LRP pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LrpReport {
    /// `(node, name, Σ relevance at the node's output)` from the target
    /// down to the input.
    pub layer_sums: Vec<(NodeId, String, f64)>,
    /// Neurons whose relevance was dropped because their denominator
    /// vanished.
    pub absorbed: usize,
}

impl LrpReport {
    pub fn sum_at(&self, node: NodeId) -> Option<f64> {
        self.layer_sums.iter().find(|(n, _, _)| *n == node).map(|t| t.2)
    }
}

struct Pass<'a> {
    model: &'a ModelGraph,
    acts: &'a Activations,
    rules: BTreeMap<NodeId, LinearRule>,
    config: &'a LrpConfig,
    absorbed: usize,
}

impl Pass<'_> {
    /// `r / z` with ε stabilization, or absorption when `z` vanishes.
    fn ratio(&mut self, r: &[f64], z: &[f64], eps: f64) -> Vec<f64> {
        r.iter()
            .zip(z)
            .map(|(&rj, &zj)| {
                if eps > 0.0 {
                    rj / (zj + eps * if zj >= 0.0 { 1.0 } else { -1.0 })
                } else if zj.abs() < ABSORB {
                    if rj != 0.0 {
                        self.absorbed += 1;
                    }
                    0.0
                } else {
                    rj / zj
                }
            })
            .collect()
    }

    fn linear(&mut self, id: NodeId, r: &[f64]) -> Vec<f64> {
        let node = self.model.node(id);
        let geom = linear_geom(self.model, id).expect("weighted node");
        let w = node.weight.as_ref().expect("weighted node").data();
        let b = node.bias.as_ref().map(|b| geom.expand_bias(b.data()));
        let a = self.acts.get(node.inputs()[0]).data();
        match self.rules[&id] {
            LinearRule::Zero => self.epsilon_rule(&geom, w, b.as_deref(), a, r, 0.0),
            LinearRule::Epsilon { epsilon } => self.epsilon_rule(&geom, w, b.as_deref(), a, r, epsilon),
            LinearRule::Gamma { gamma } => {
                let wg: Vec<f64> = w.iter().map(|&v| v + gamma * v.max(0.0)).collect();
                let bg = b.map(|b| b.iter().map(|&v| v + gamma * v.max(0.0)).collect::<Vec<_>>());
                self.epsilon_rule(&geom, &wg, bg.as_deref(), a, r, 0.0)
            }
            LinearRule::Beta { beta } => self.beta_rule(&geom, w, a, r, |_, _| beta),
            LinearRule::AdaptiveBeta { cap } => {
                let variant = self.config.adaptive_variant;
                self.beta_rule(&geom, w, a, r, |p, n| adaptive_beta_from_sums(p, n, cap, variant))
            }
            LinearRule::ZBox { low, high } => self.zbox_rule(&geom, w, a, r, low, high),
        }
    }

    fn epsilon_rule(
        &mut self,
        geom: &LinearGeom,
        w: &[f64],
        b: Option<&[f64]>,
        a: &[f64],
        r: &[f64],
        eps: f64,
    ) -> Vec<f64> {
        let mut z = geom.apply(w, a);
        if let Some(b) = b {
            z.iter_mut().zip(b).for_each(|(zj, bj)| *zj += bj);
        }
        let s = self.ratio(r, &z, eps);
        let c = geom.transpose(w, &s);
        a.iter().zip(&c).map(|(ai, ci)| ai * ci).collect()
    }

    /// `R_i = Σ_j R_j [(1+β)(a_i w_ij)₊ / z₊ − β (a_i w_ij)₋ / z₋]`. A neuron
    /// with contributions of one sign only redistributes `R_j` over them in
    /// proportion, so relevance is conserved.
    fn beta_rule(
        &mut self,
        geom: &LinearGeom,
        w: &[f64],
        a: &[f64],
        r: &[f64],
        beta_of: impl Fn(f64, f64) -> f64,
    ) -> Vec<f64> {
        let ap: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
        let an: Vec<f64> = a.iter().map(|v| v.min(0.0)).collect();
        let wp: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
        let wn: Vec<f64> = w.iter().map(|v| v.min(0.0)).collect();
        let add = |x: Vec<f64>, y: Vec<f64>| x.into_iter().zip(y).map(|(p, q)| p + q).collect::<Vec<f64>>();
        let zp = add(geom.apply(&wp, &ap), geom.apply(&wn, &an));
        let zn = add(geom.apply(&wp, &an), geom.apply(&wn, &ap));
        let mut sp = vec![0.0; r.len()];
        let mut sn = vec![0.0; r.len()];
        for j in 0..r.len() {
            let (has_p, has_n) = (zp[j] > ABSORB, zn[j] < -ABSORB);
            match (has_p, has_n) {
                (true, true) => {
                    let beta = beta_of(zp[j], -zn[j]);
                    sp[j] = (1.0 + beta) * r[j] / zp[j];
                    sn[j] = -beta * r[j] / zn[j];
                }
                (true, false) => sp[j] = r[j] / zp[j],
                (false, true) => sn[j] = r[j] / zn[j],
                (false, false) => {
                    if r[j] != 0.0 {
                        self.absorbed += 1;
                    }
                }
            }
        }
        let pos_p = geom.transpose(&wp, &sp);
        let pos_n = geom.transpose(&wn, &sp);
        let neg_p = geom.transpose(&wp, &sn);
        let neg_n = geom.transpose(&wn, &sn);
        (0..a.len())
            .map(|i| ap[i] * pos_p[i] + an[i] * pos_n[i] + an[i] * neg_p[i] + ap[i] * neg_n[i])
            .collect()
    }

    fn zbox_rule(&mut self, geom: &LinearGeom, w: &[f64], a: &[f64], r: &[f64], low: f64, high: f64) -> Vec<f64> {
        let wp: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
        let wn: Vec<f64> = w.iter().map(|v| v.min(0.0)).collect();
        let lo = vec![low; a.len()];
        let hi = vec![high; a.len()];
        let z: Vec<f64> = geom
            .apply(w, a)
            .into_iter()
            .zip(geom.apply(&wp, &lo))
            .zip(geom.apply(&wn, &hi))
            .map(|((z, l), h)| z - l - h)
            .collect();
        let s = self.ratio(r, &z, 0.0);
        let c = geom.transpose(w, &s);
        let cp = geom.transpose(&wp, &s);
        let cn = geom.transpose(&wn, &s);
        (0..a.len()).map(|i| a[i] * c[i] - low * cp[i] - high * cn[i]).collect()
    }

    /// Splits `r` over summands in proportion to their values.
    fn proportional(&mut self, parts: &[&[f64]], r: &[f64]) -> Vec<Vec<f64>> {
        let total: Vec<f64> = (0..r.len()).map(|j| parts.iter().map(|p| p[j]).sum()).collect();
        let s = self.ratio(r, &total, 0.0);
        parts
            .iter()
            .map(|p| p.iter().zip(&s).map(|(a, s)| a * s).collect())
            .collect()
    }

    /// Runs the pass from `from`. With `route = Some((node, slot))`, the
    /// residual node `node` hands relevance to input `slot` only.
    fn run(&mut self, from: NodeId, init: Vec<f64>, route: Option<(NodeId, usize)>) -> (Vec<f64>, Vec<(NodeId, String, f64)>) {
        let model = self.model;
        let mut rel: Vec<Option<Vec<f64>>> = vec![None; model.len()];
        rel[from] = Some(init);
        let mut sums = Vec::new();
        for id in (1..=from).rev() {
            let Some(r) = rel[id].take() else { continue };
            let node = model.node(id);
            sums.push((id, node.name().to_string(), r.iter().sum()));
            let src = node.inputs()[0];
            let a = self.acts.get(src).data();
            let mut out: Vec<(NodeId, Vec<f64>)> = Vec::with_capacity(2);
            match *node.kind() {
                LayerKind::Input { .. } => unreachable!(),
                LayerKind::Dense { .. } | LayerKind::Conv2D { .. } => out.push((src, self.linear(id, &r))),
                LayerKind::AvgPool { size } => {
                    let shape = self.acts.get(src).shape();
                    let mut ri = vec![0.0; a.len()];
                    let squared = self.config.avg_pool == PoolRule::Squared;
                    let weight = |v: f64| if squared { v * v } else { v };
                    let mut denoms = vec![0.0; r.len()];
                    ops::pool_windows(shape, size, |o, win| {
                        denoms[o] = win.iter().map(|&i| weight(a[i])).sum();
                    });
                    let s = self.ratio(&r, &denoms, 0.0);
                    ops::pool_windows(shape, size, |o, win| {
                        for &i in win {
                            ri[i] = weight(a[i]) * s[o];
                        }
                    });
                    out.push((src, ri));
                }
                LayerKind::MaxPool { size } => {
                    let mut ri = vec![0.0; a.len()];
                    for (o, i) in ops::max_pool_argmax(a, self.acts.get(src).shape(), size)
                        .into_iter()
                        .enumerate()
                    {
                        ri[i] += r[o];
                    }
                    out.push((src, ri));
                }
                LayerKind::ReLU | LayerKind::Flatten => out.push((src, r)),
                LayerKind::ResidualAdd => {
                    let other = node.inputs()[1];
                    let mut split = self.proportional(&[a, self.acts.get(other).data()], &r);
                    let weighted = split.pop().expect("two parts");
                    let skip = split.pop().expect("two parts");
                    match route {
                        Some((n, 0)) if n == id => out.push((src, skip)),
                        Some((n, _)) if n == id => out.push((other, weighted)),
                        _ => {
                            out.push((src, skip));
                            out.push((other, weighted));
                        }
                    }
                }
                LayerKind::BiasOnly => {
                    let b = node.bias.as_ref().expect("bias node").data();
                    let mut split = self.proportional(&[a, b], &r);
                    split.pop();
                    out.push((src, split.pop().expect("two parts")));
                }
            }
            for (target, v) in out {
                match &mut rel[target] {
                    Some(acc) => acc.iter_mut().zip(&v).for_each(|(x, y)| *x += y),
                    slot @ None => *slot = Some(v),
                }
            }
        }
        let input = rel[0].take().unwrap_or_else(|| vec![0.0; self.acts.get(0).len()]);
        sums.push((0, model.node(0).name().to_string(), input.iter().sum()));
        (input, sums)
    }
}

/// Starting node and relevance for `target`.
fn initial_relevance(model: &ModelGraph, acts: &Activations, target: Target) -> Result<(NodeId, Vec<f64>)> {
    match target {
        Target::Logit(c) => {
            let len = model.num_classes();
            if c >= len {
                return Err(Error::Selector { selector: c, len });
            }
            let mut v = vec![0.0; len];
            v[c] = acts.logits().data()[c];
            Ok((model.output_id(), v))
        }
        Target::ActivationSum(node) => {
            if node >= model.len() {
                return Err(Error::Graph(format!("no node {node}")));
            }
            Ok((node, acts.get(node).data().to_vec()))
        }
    }
}

fn run_pass(
    model: &ModelGraph,
    x: &Tensor,
    target: Target,
    config: &LrpConfig,
    route: Option<(NodeId, usize)>,
) -> Result<(Tensor, LrpReport)> {
    let rules = config.resolve(model)?;
    let acts = forward(model, x)?;
    let (from, init) = initial_relevance(model, &acts, target)?;
    let mut pass = Pass {
        model,
        acts: &acts,
        rules,
        config,
        absorbed: 0,
    };
    let (input, layer_sums) = pass.run(from, init, route);
    let report = LrpReport {
        layer_sums,
        absorbed: pass.absorbed,
    };
    Ok((Tensor::new(x.shape().to_vec(), input)?, report))
}

/// LRP relevance at the input together with per-layer relevance sums.
pub fn lrp_with_report(
    model: &ModelGraph,
    x: &Tensor,
    target: Target,
    config: &LrpConfig,
) -> Result<(AttributionMap, LrpReport)> {
    let (values, report) = run_pass(model, x, target, config, None)?;
    Ok((AttributionMap::new(values, config.name(), target)?, report))
}

pub fn lrp(model: &ModelGraph, x: &Tensor, target: Target, config: &LrpConfig) -> Result<AttributionMap> {
    Ok(lrp_with_report(model, x, target, config)?.0)
}

/// Explains the sum of the activations at `node`, propagating only through
/// the part of the model below it.
pub fn attribute_intermediate(
    model: &ModelGraph,
    x: &Tensor,
    node: NodeId,
    config: &LrpConfig,
) -> Result<AttributionMap> {
    lrp(model, x, Target::ActivationSum(node), config)
}

/// An explanation separated at one residual node into the share that
/// passed through the skip connection and the share through the weighted
/// branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipSplit {
    pub node: NodeId,
    pub total: AttributionMap,
    pub skip: AttributionMap,
    pub weighted: AttributionMap,
}

/// Splits at `at`, or at the topmost residual node when `at` is `None`.
/// The node must be a cut so that all relevance flows through it.
pub fn skip_split(
    model: &ModelGraph,
    x: &Tensor,
    target: Target,
    config: &LrpConfig,
    at: Option<NodeId>,
) -> Result<SkipSplit> {
    let node = match at {
        Some(n) => n,
        None => *model
            .residual_nodes()
            .last()
            .ok_or_else(|| Error::Graph("model has no residual node to split at".into()))?,
    };
    if node >= model.len() || *model.node(node).kind() != LayerKind::ResidualAdd {
        return Err(Error::Graph(format!("node {node} is not a residual node")));
    }
    if !model.is_cut(node) {
        return Err(Error::Graph(format!(
            "residual node '{}' is not a cut of the graph",
            model.node(node).name()
        )));
    }
    let name = config.name();
    let (total, _) = run_pass(model, x, target, config, None)?;
    let (skip, _) = run_pass(model, x, target, config, Some((node, 0)))?;
    let (weighted, _) = run_pass(model, x, target, config, Some((node, 1)))?;
    Ok(SkipSplit {
        node,
        total: AttributionMap::new(total, name.clone(), target)?,
        skip: AttributionMap::new(skip, format!("{name}.skip"), target)?,
        weighted: AttributionMap::new(weighted, format!("{name}.weighted"), target)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, ParamKind, ParamSlot};

    fn neuron(w: &[f64]) -> ModelGraph {
        let mut b = GraphBuilder::new(&[w.len()]);
        b.dense("fc", 0, 1);
        b.build()
            .unwrap()
            .with_param(
                ParamSlot { node: 1, kind: ParamKind::Weight },
                Tensor::new(vec![1, w.len()], w.to_vec()).unwrap(),
            )
            .unwrap()
    }

    #[test]
    fn beta_rule_by_hand() {
        // Contributions w·x = [3, −1], so z = 2; rescale so R(z) = 1 by
        // explaining through a logit of value 2 and dividing.
        let m = neuron(&[3.0, -1.0]);
        let x = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let r0 = lrp(&m, &x, Target::Logit(0), &LrpConfig::beta(0.0)).unwrap();
        let r1 = lrp(&m, &x, Target::Logit(0), &LrpConfig::beta(1.0)).unwrap();
        let per_unit = |t: &Tensor| t.data().iter().map(|v| v / 2.0).collect::<Vec<_>>();
        assert_eq!(per_unit(&r0.values), vec![1.0, 0.0]);
        assert_eq!(per_unit(&r1.values), vec![2.0, -1.0]);
    }

    #[test]
    fn adaptive_beta_values() {
        assert_eq!(adaptive_beta(&[2.0, 1.0, -1.0], 3.0), 0.25);
        assert_eq!(adaptive_beta(&[2.0, 1.0], 3.0), 0.0);
        assert_eq!(adaptive_beta(&[-2.0], 3.0), 1.0);
        assert_eq!(adaptive_beta(&[0.0, 0.0], 3.0), 0.0);
        assert_eq!(adaptive_beta_from_sums(3.0, 1.0, 3.0, AdaptiveVariant::Algebraic), 0.5);
        assert_eq!(adaptive_beta_from_sums(1.0, 2.0, 3.0, AdaptiveVariant::Algebraic), 3.0);
    }

    #[test]
    fn epsilon_sign_convention_at_zero() {
        let m = neuron(&[1.0, -1.0]);
        let x = Tensor::new(vec![2], vec![2.0, 2.0]).unwrap();
        // z = 0 and the logit is 0, so relevance stays 0 either way.
        let r = lrp(&m, &x, Target::Logit(0), &LrpConfig::epsilon(0.1)).unwrap();
        assert_eq!(r.values.data(), &[0.0, 0.0]);
    }

    #[test]
    fn zbox_is_conservative_and_bounded() {
        let m = neuron(&[0.5, -2.0, 1.0]);
        let x = Tensor::new(vec![3], vec![0.9, 0.2, 0.4]).unwrap();
        let cfg = LrpConfig {
            first: Some(LinearRule::ZBox { low: 0.0, high: 1.0 }),
            ..LrpConfig::zero()
        };
        let (r, rep) = lrp_with_report(&m, &x, Target::Logit(0), &cfg).unwrap();
        let f = 0.45 - 0.4 + 0.4;
        assert!((r.values.sum() - f).abs() < 1e-12);
        assert_eq!(rep.absorbed, 0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = LrpConfig::zero();
        c.dense = LinearRule::Epsilon { epsilon: -1.0 };
        assert!(c.validate().is_err());
        let mut c = LrpConfig::zero();
        c.first = Some(LinearRule::ZBox { low: 1.0, high: 0.0 });
        assert!(c.validate().is_err());
        let mut c = LrpConfig::zero();
        c.overrides.insert("nope".into(), LinearRule::Zero);
        let m = neuron(&[1.0]);
        assert!(lrp(&m, &Tensor::filled(&[1], 1.0), Target::Logit(0), &c).is_err());
    }

    #[test]
    fn gamma_decay_is_geometric() {
        let d = GammaDecay { bottom: 1.0, top: 0.01 };
        assert_eq!(d.gamma_at(0, 3), 1.0);
        assert!((d.gamma_at(1, 3) - 0.1).abs() < 1e-15);
        assert!((d.gamma_at(2, 3) - 0.01).abs() < 1e-15);
        assert_eq!(d.gamma_at(0, 1), 1.0);
    }
}
