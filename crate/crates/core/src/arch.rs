//! Declarative CNN descriptions and their cost model.
//!
//! An architecture document is a JSON object with `name`, `input_shape: [c, h, w]`
//! and an ordered `layers` list. Layers may only reference earlier layers, so
//! the list order is a topological order of the graph. Every searchable conv/fc
//! layer contributes one search variable, except that layers sharing a
//! `tie_group` collapse onto a single variable (needed wherever an `add`
//! merges two branches).
//!
//! FLOPs are counted as multiply-accumulates. Parameters count weights, biases
//! and the BatchNorm affine pair (scale and shift) per output channel.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::StructureVector;

const T2: &str = include_str!("../archs/t2.arch");
const VGG16_CIFAR: &str = include_str!("../archs/vgg16-cifar.arch");
const RESNET56_CIFAR: &str = include_str!("../archs/resnet56-cifar.arch");

/// Names of the architecture documents compiled into the crate.
pub const BUNDLED: [&str; 3] = ["t2", "vgg16-cifar", "resnet56-cifar"];

/// Returns the text of a bundled architecture document.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name.trim_end_matches(".arch") {
        "t2" => Some(T2),
        "vgg16-cifar" => Some(VGG16_CIFAR),
        "resnet56-cifar" => Some(RESNET56_CIFAR),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Input,
    Conv,
    Fc,
    Add,
    /// Spatial pooling (max or average); no weights, no counted FLOPs.
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchDoc {
    name: String,
    input_shape: [u64; 3],
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    id: String,
    kind: LayerKind,
    kernel_h: Option<u64>,
    kernel_w: Option<u64>,
    stride: Option<u64>,
    padding: Option<Padding>,
    groups: Option<u64>,
    has_bias: Option<bool>,
    has_bn: Option<bool>,
    inputs: Option<Vec<String>>,
    base_out_channels: Option<u64>,
    searchable: Option<bool>,
    tie_group: Option<String>,
}

/// One validated layer, with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub kernel_h: u64,
    pub kernel_w: u64,
    pub stride: u64,
    pub padding: Padding,
    pub groups: u64,
    pub has_bias: bool,
    pub has_bn: bool,
    pub inputs: Vec<String>,
    pub base_out_channels: Option<u64>,
    pub searchable: bool,
    pub tie_group: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channels {
    Fixed(u64),
    Var(usize),
}

#[derive(Debug, Clone)]
struct Node {
    inputs: Vec<usize>,
    channels: Channels,
    out_h: u64,
    out_w: u64,
}

/// FLOPs (MACs) and parameter count of one structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: u64,
    pub params: u64,
}

/// Lower bounds on the FLOPs and parameter pruning rates. Zero leaves that
/// quantity unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityTargets {
    pub flops: f64,
    pub params: f64,
}

impl SparsityTargets {
    pub fn new(flops: f64, params: f64) -> Result<Self> {
        for (name, v) in [("flops", flops), ("params", params)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidTargets(format!(
                    "{name} rate {v} is outside [0, 1]"
                )));
            }
        }
        Ok(Self { flops, params })
    }

    pub fn none() -> Self {
        Self {
            flops: 0.0,
            params: 0.0,
        }
    }

    pub fn is_met(&self, r_f: f64, r_p: f64) -> bool {
        r_f >= self.flops && r_p >= self.params
    }
}

/// A parsed and validated architecture.
#[derive(Debug, Clone)]
pub struct ArchitectureSpec {
    name: String,
    input_shape: [u64; 3],
    layers: Vec<LayerSpec>,
    nodes: Vec<Node>,
    base_structure: StructureVector,
    variable_names: Vec<String>,
    base_cost: CostReport,
}

impl ArchitectureSpec {
    /// Parses an architecture document.
    pub fn parse(text: &str) -> Result<Self> {
        let doc: ArchDoc =
            serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Loads a file path, falling back to a bundled document of that name.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::from_file(path);
        }
        match bundled(name_or_path) {
            Some(text) => Self::parse(text),
            None => Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no architecture file or bundled spec named `{name_or_path}`"),
            ))),
        }
    }

    fn from_doc(doc: ArchDoc) -> Result<Self> {
        let invalid = |msg: String| Error::InvalidArch(msg);
        if doc.input_shape.contains(&0) {
            return Err(invalid("input_shape entries must be positive".into()));
        }
        if doc.layers.is_empty() {
            return Err(invalid("no layers".into()));
        }

        let mut index_of: HashMap<String, usize> = HashMap::new();
        let mut layers = Vec::with_capacity(doc.layers.len());
        let mut nodes: Vec<Node> = Vec::with_capacity(doc.layers.len());
        let mut base: Vec<i64> = Vec::new();
        let mut variable_names: Vec<String> = Vec::new();
        let mut tie_vars: HashMap<String, usize> = HashMap::new();
        let mut input_seen = false;

        for (pos, raw) in doc.layers.into_iter().enumerate() {
            let id = raw.id.clone();
            if index_of.contains_key(&id) {
                return Err(invalid(format!("duplicate layer id `{id}`")));
            }
            let has_kernel = raw.kernel_h.is_some() || raw.kernel_w.is_some();
            let reject = |what: &str| invalid(format!("layer `{id}`: `{what}` not allowed here"));

            let input_names = match (raw.kind, raw.inputs.clone()) {
                (LayerKind::Input, Some(_)) => return Err(reject("inputs")),
                (LayerKind::Input, None) => Vec::new(),
                (_, Some(v)) => v,
                (_, None) if pos > 0 => vec![layers_last_id(&layers)],
                (_, None) => {
                    return Err(invalid(format!("layer `{id}` has no inputs")));
                }
            };
            let mut inputs = Vec::with_capacity(input_names.len());
            for name in &input_names {
                match index_of.get(name) {
                    Some(&i) => inputs.push(i),
                    None => {
                        return Err(invalid(format!(
                            "dangling input reference `{name}` in layer `{id}` (inputs must name earlier layers)"
                        )))
                    }
                }
            }

            let (kernel_h, kernel_w) = match raw.kind {
                LayerKind::Conv | LayerKind::Pool => {
                    let (Some(kh), Some(kw)) = (raw.kernel_h, raw.kernel_w) else {
                        return Err(invalid(format!("layer `{id}` needs kernel_h and kernel_w")));
                    };
                    if kh == 0 || kw == 0 {
                        return Err(invalid(format!("layer `{id}`: kernel must be positive")));
                    }
                    (kh, kw)
                }
                _ if has_kernel => return Err(reject("kernel_h/kernel_w")),
                _ => (1, 1),
            };
            let stride = match raw.kind {
                LayerKind::Conv | LayerKind::Pool => raw.stride.unwrap_or(1),
                _ if raw.stride.is_some() => return Err(reject("stride")),
                _ => 1,
            };
            if stride == 0 {
                return Err(invalid(format!("layer `{id}`: stride must be positive")));
            }
            let padding = match raw.kind {
                LayerKind::Conv | LayerKind::Pool => raw.padding.unwrap_or(Padding::Same),
                _ if raw.padding.is_some() => return Err(reject("padding")),
                _ => Padding::Same,
            };
            let groups = match raw.kind {
                LayerKind::Conv => raw.groups.unwrap_or(1),
                _ if raw.groups.is_some() => return Err(reject("groups")),
                _ => 1,
            };
            if groups == 0 {
                return Err(invalid(format!("layer `{id}`: groups must be positive")));
            }
            let weighted = matches!(raw.kind, LayerKind::Conv | LayerKind::Fc);
            if !weighted {
                if raw.has_bias.is_some() {
                    return Err(reject("has_bias"));
                }
                if raw.has_bn.is_some() {
                    return Err(reject("has_bn"));
                }
                if raw.base_out_channels.is_some() {
                    return Err(reject("base_out_channels"));
                }
                if raw.searchable == Some(true) {
                    return Err(reject("searchable"));
                }
                if raw.tie_group.is_some() {
                    return Err(reject("tie_group"));
                }
            }
            let searchable = raw.searchable.unwrap_or(raw.kind == LayerKind::Conv);
            if raw.tie_group.is_some() && !searchable {
                return Err(invalid(format!(
                    "layer `{id}`: tie_group requires a searchable layer"
                )));
            }
            let base_out = if weighted {
                match raw.base_out_channels {
                    Some(0) | None => {
                        return Err(invalid(format!(
                            "layer `{id}` needs a positive base_out_channels"
                        )))
                    }
                    Some(c) => Some(c),
                }
            } else {
                None
            };

            let arity_ok = match raw.kind {
                LayerKind::Input => inputs.is_empty(),
                LayerKind::Add => inputs.len() >= 2,
                _ => inputs.len() == 1,
            };
            if !arity_ok {
                return Err(invalid(format!(
                    "layer `{id}` has {} inputs, which its kind does not allow",
                    inputs.len()
                )));
            }

            let channels = match raw.kind {
                LayerKind::Input => {
                    if input_seen {
                        return Err(invalid("more than one input layer".into()));
                    }
                    input_seen = true;
                    Channels::Fixed(doc.input_shape[0])
                }
                LayerKind::Conv | LayerKind::Fc => {
                    let c = base_out.expect("weighted layer has channels");
                    if !searchable {
                        Channels::Fixed(c)
                    } else if let Some(group) = &raw.tie_group {
                        match tie_vars.get(group) {
                            Some(&v) => {
                                if base[v] as u64 != c {
                                    return Err(invalid(format!(
                                        "layer `{id}`: tie group `{group}` mixes base widths {} and {c}",
                                        base[v]
                                    )));
                                }
                                Channels::Var(v)
                            }
                            None => {
                                let v = base.len();
                                base.push(c as i64);
                                variable_names.push(group.clone());
                                tie_vars.insert(group.clone(), v);
                                Channels::Var(v)
                            }
                        }
                    } else {
                        base.push(c as i64);
                        variable_names.push(id.clone());
                        Channels::Var(base.len() - 1)
                    }
                }
                LayerKind::Pool => nodes[inputs[0]].channels,
                LayerKind::Add => {
                    let first = nodes[inputs[0]].channels;
                    if inputs.iter().any(|&i| nodes[i].channels != first) {
                        return Err(invalid(format!(
                            "add layer `{id}` merges untied inputs {input_names:?}"
                        )));
                    }
                    first
                }
            };

            let (out_h, out_w) = match raw.kind {
                LayerKind::Input => (doc.input_shape[1], doc.input_shape[2]),
                LayerKind::Conv | LayerKind::Pool => {
                    let src = &nodes[inputs[0]];
                    (
                        spatial(&id, src.out_h, kernel_h, stride, padding)?,
                        spatial(&id, src.out_w, kernel_w, stride, padding)?,
                    )
                }
                LayerKind::Fc => (1, 1),
                LayerKind::Add => {
                    let src = &nodes[inputs[0]];
                    if inputs
                        .iter()
                        .any(|&i| (nodes[i].out_h, nodes[i].out_w) != (src.out_h, src.out_w))
                    {
                        return Err(invalid(format!(
                            "add layer `{id}` merges inputs of different spatial size"
                        )));
                    }
                    (src.out_h, src.out_w)
                }
            };

            index_of.insert(id.clone(), pos);
            nodes.push(Node {
                inputs,
                channels,
                out_h,
                out_w,
            });
            layers.push(LayerSpec {
                id,
                kind: raw.kind,
                kernel_h,
                kernel_w,
                stride,
                padding,
                groups,
                has_bias: raw.has_bias.unwrap_or(false),
                has_bn: raw.has_bn.unwrap_or(false),
                inputs: input_names,
                base_out_channels: base_out,
                searchable,
                tie_group: raw.tie_group,
            });
        }

        if !input_seen {
            return Err(invalid("missing input layer".into()));
        }
        if base.is_empty() {
            return Err(invalid("no searchable layers".into()));
        }

        let mut spec = Self {
            name: doc.name,
            input_shape: doc.input_shape,
            layers,
            nodes,
            base_structure: StructureVector(base),
            variable_names,
            base_cost: CostReport {
                flops: 0,
                params: 0,
            },
        };
        spec.base_cost = spec.cost_unchecked(&spec.base_structure.0)?;
        Ok(spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [u64; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// The unpruned structure vector, one entry per search variable.
    pub fn base_structure(&self) -> &StructureVector {
        &self.base_structure
    }

    /// Number of search variables.
    pub fn num_variables(&self) -> usize {
        self.base_structure.len()
    }

    /// Tie-group name or layer id owning each search variable.
    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    /// Search variable controlling a layer's output channels, if any.
    pub fn variable_of(&self, layer_id: &str) -> Option<usize> {
        let pos = self.layers.iter().position(|l| l.id == layer_id)?;
        match self.nodes[pos].channels {
            Channels::Var(v) => Some(v),
            Channels::Fixed(_) => None,
        }
    }

    pub fn base_cost(&self) -> CostReport {
        self.base_cost
    }

    /// Output spatial size of each layer, in layer order.
    pub fn spatial_sizes(&self) -> Vec<(u64, u64)> {
        self.nodes.iter().map(|n| (n.out_h, n.out_w)).collect()
    }

    fn check_structure(&self, s: &StructureVector) -> Result<()> {
        if s.len() != self.num_variables() {
            return Err(Error::LengthMismatch {
                expected: self.num_variables(),
                got: s.len(),
            });
        }
        for (index, (&value, &max)) in s.0.iter().zip(&self.base_structure.0).enumerate() {
            if value < 1 || value > max {
                return Err(Error::OutOfRange { index, value, max });
            }
        }
        Ok(())
    }

    /// FLOPs and parameters of the network pruned to `s`.
    pub fn compute_cost(&self, s: &StructureVector) -> Result<CostReport> {
        self.check_structure(s)?;
        self.cost_unchecked(&s.0)
    }

    fn cost_unchecked(&self, s: &[i64]) -> Result<CostReport> {
        let width = |c: Channels| match c {
            Channels::Fixed(n) => n,
            Channels::Var(v) => s[v] as u64,
        };
        let mut flops = 0u64;
        let mut params = 0u64;
        for (layer, node) in self.layers.iter().zip(&self.nodes) {
            let out_ch = width(node.channels);
            let (weights, macs) = match layer.kind {
                LayerKind::Conv => {
                    let in_ch = width(self.nodes[node.inputs[0]].channels);
                    if in_ch % layer.groups != 0 || out_ch % layer.groups != 0 {
                        return Err(Error::Groups {
                            layer: layer.id.clone(),
                            groups: layer.groups,
                            in_ch,
                            out_ch,
                        });
                    }
                    let w = layer.kernel_h * layer.kernel_w * (in_ch / layer.groups) * out_ch;
                    (w, w * node.out_h * node.out_w)
                }
                LayerKind::Fc => {
                    let src = &self.nodes[node.inputs[0]];
                    let in_features = width(src.channels) * src.out_h * src.out_w;
                    let w = in_features * out_ch;
                    (w, w)
                }
                _ => continue,
            };
            flops += macs;
            params += weights;
            if layer.has_bias {
                params += out_ch;
            }
            if layer.has_bn {
                params += 2 * out_ch;
            }
        }
        Ok(CostReport { flops, params })
    }

    /// `(r_f, r_p)`: fractional FLOPs and parameter reduction against the base.
    pub fn pruning_rates(&self, s: &StructureVector) -> Result<(f64, f64)> {
        let cost = self.compute_cost(s)?;
        Ok(self.rates_of(cost))
    }

    pub(crate) fn rates_of(&self, cost: CostReport) -> (f64, f64) {
        (
            1.0 - cost.flops as f64 / self.base_cost.flops as f64,
            1.0 - cost.params as f64 / self.base_cost.params as f64,
        )
    }

    pub fn is_feasible(&self, s: &StructureVector, targets: &SparsityTargets) -> Result<bool> {
        let (r_f, r_p) = self.pruning_rates(s)?;
        Ok(targets.is_met(r_f, r_p))
    }

    /// Per-variable share of the base FLOPs, summed over the conv/fc layers
    /// whose output width the variable controls. Sums to one.
    pub fn flops_shares(&self) -> Vec<f64> {
        let s = &self.base_structure.0;
        let mut per_var = vec![0u64; s.len()];
        for (layer, node) in self.layers.iter().zip(&self.nodes) {
            let Channels::Var(v) = node.channels else {
                continue;
            };
            let width = |c: Channels| match c {
                Channels::Fixed(n) => n,
                Channels::Var(i) => s[i] as u64,
            };
            let src = &self.nodes[node.inputs[0]];
            let macs = match layer.kind {
                LayerKind::Conv => {
                    layer.kernel_h
                        * layer.kernel_w
                        * (width(src.channels) / layer.groups)
                        * s[v] as u64
                        * node.out_h
                        * node.out_w
                }
                LayerKind::Fc => width(src.channels) * src.out_h * src.out_w * s[v] as u64,
                _ => 0,
            };
            per_var[v] += macs;
        }
        let total: u64 = per_var.iter().sum();
        per_var.iter().map(|&m| m as f64 / total as f64).collect()
    }
}

fn layers_last_id(layers: &[LayerSpec]) -> String {
    layers.last().map(|l| l.id.clone()).unwrap_or_default()
}

fn spatial(id: &str, extent: u64, kernel: u64, stride: u64, padding: Padding) -> Result<u64> {
    match padding {
        Padding::Same => Ok(extent.div_ceil(stride)),
        Padding::Valid => {
            if kernel > extent {
                return Err(Error::Spatial {
                    layer: id.to_string(),
                    kernel,
                    extent,
                });
            }
            Ok((extent - kernel) / stride + 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2() -> ArchitectureSpec {
        ArchitectureSpec::parse(bundled("t2").unwrap()).unwrap()
    }

    fn sv(v: &[i64]) -> StructureVector {
        StructureVector(v.to_vec())
    }

    #[test]
    fn t2_base_structure() {
        assert_eq!(t2().base_structure().0, vec![4, 8]);
    }

    #[test]
    fn vgg16_base_structure() {
        let spec = ArchitectureSpec::load("vgg16-cifar").unwrap();
        assert_eq!(
            spec.base_structure().0,
            vec![64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
        );
    }

    #[test]
    fn resnet56_ties_residual_branches() {
        let spec = ArchitectureSpec::load("resnet56-cifar").unwrap();
        // 27 free inner convs plus one tied variable per stage.
        assert_eq!(spec.num_variables(), 30);
        assert_eq!(spec.variable_of("conv1"), spec.variable_of("s1b1_conv2"));
        assert_eq!(spec.variable_of("s2_proj"), spec.variable_of("s2b9_conv2"));
        assert_ne!(
            spec.variable_of("s1b1_conv1"),
            spec.variable_of("s1b2_conv1")
        );
        assert_eq!(spec.variable_of("fc"), None);
    }

    #[test]
    fn t2_costs() {
        let spec = t2();
        assert_eq!(
            spec.compute_cost(&sv(&[4, 8])).unwrap(),
            CostReport {
                flops: 25344,
                params: 396
            }
        );
        assert_eq!(spec.compute_cost(&sv(&[2, 8])).unwrap().flops, 12672);
        assert_eq!(spec.pruning_rates(&sv(&[4, 8])).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn t2_rates() {
        let spec = t2();
        let (rf, rp) = spec.pruning_rates(&sv(&[2, 8])).unwrap();
        assert_eq!(rf, 0.5);
        // conv1 9*3*2 + conv2 9*2*8 = 198 of 396
        assert_eq!(rp, 0.5);
        let (rf, rp) = spec.pruning_rates(&sv(&[2, 4])).unwrap();
        assert!((rf - (1.0 - 8064.0 / 25344.0)).abs() < 1e-12);
        assert!((rp - (1.0 - 126.0 / 396.0)).abs() < 1e-12);
    }

    #[test]
    fn t2_feasibility() {
        let spec = t2();
        let s = sv(&[2, 8]);
        assert!(spec.is_feasible(&s, &SparsityTargets::none()).unwrap());
        assert!(spec
            .is_feasible(&s, &SparsityTargets::new(0.5, 0.0).unwrap())
            .unwrap());
        assert!(spec
            .is_feasible(&s, &SparsityTargets::new(0.5, 0.5).unwrap())
            .unwrap());
        assert!(!spec
            .is_feasible(&s, &SparsityTargets::new(0.5, 0.6).unwrap())
            .unwrap());
    }

    #[test]
    fn structure_errors() {
        let spec = t2();
        assert!(matches!(
            spec.compute_cost(&sv(&[4])),
            Err(Error::LengthMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            spec.compute_cost(&sv(&[5, 8])),
            Err(Error::OutOfRange { index: 0, .. })
        ));
        assert!(matches!(
            spec.compute_cost(&sv(&[0, 8])),
            Err(Error::OutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn targets_out_of_range() {
        assert!(SparsityTargets::new(1.5, 0.0).is_err());
        assert!(SparsityTargets::new(0.0, -0.1).is_err());
        assert!(SparsityTargets::new(1.0, 0.0).is_ok());
    }

    const HEAD: &str = r#"{"name":"x","input_shape":[3,8,8],"layers":[{"id":"in","kind":"input"}"#;

    fn doc(layers: &str) -> String {
        format!("{HEAD}{layers}]}}")
    }

    #[test]
    fn no_searchable_layers() {
        let err = ArchitectureSpec::parse(&doc("")).unwrap_err();
        assert!(err.to_string().contains("no searchable layers"), "{err}");
        let err =
            ArchitectureSpec::parse(&doc(r#",{"id":"fc","kind":"fc","base_out_channels":10}"#))
                .unwrap_err();
        assert!(err.to_string().contains("no searchable layers"), "{err}");
    }

    #[test]
    fn rejects_malformed_documents() {
        assert!(matches!(
            ArchitectureSpec::parse("{not json"),
            Err(Error::Malformed(_))
        ));
        let unknown = doc(
            r#",{"id":"c","kind":"conv","kernel_h":3,"kernel_w":3,"base_out_channels":4,"dilation":2}"#,
        );
        assert!(matches!(
            ArchitectureSpec::parse(&unknown),
            Err(Error::Malformed(_))
        ));
        let bad_kind = doc(r#",{"id":"c","kind":"lstm"}"#);
        assert!(matches!(
            ArchitectureSpec::parse(&bad_kind),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn rejects_dangling_input() {
        let text = doc(
            r#",{"id":"c","kind":"conv","kernel_h":3,"kernel_w":3,"base_out_channels":4,"inputs":["nope"]}"#,
        );
        let err = ArchitectureSpec::parse(&text).unwrap_err();
        assert!(
            err.to_string().contains("dangling input reference `nope`"),
            "{err}"
        );
    }

    #[test]
    fn rejects_untied_add() {
        let text = doc(concat!(
            r#",{"id":"a","kind":"conv","kernel_h":3,"kernel_w":3,"base_out_channels":4,"inputs":["in"]}"#,
            r#",{"id":"b","kind":"conv","kernel_h":3,"kernel_w":3,"base_out_channels":4,"inputs":["in"]}"#,
            r#",{"id":"sum","kind":"add","inputs":["a","b"]}"#
        ));
        let err = ArchitectureSpec::parse(&text).unwrap_err();
        assert!(err.to_string().contains("untied"), "{err}");

        let tied = text.replace(
            r#""base_out_channels":4,"inputs":["in"]}"#,
            r#""base_out_channels":4,"inputs":["in"],"tie_group":"g"}"#,
        );
        let spec = ArchitectureSpec::parse(&tied).unwrap();
        assert_eq!(spec.base_structure().0, vec![4]);
    }

    #[test]
    fn fixed_equal_widths_may_be_added() {
        let text = doc(concat!(
            r#",{"id":"a","kind":"conv","kernel_h":1,"kernel_w":1,"base_out_channels":4,"searchable":false}"#,
            r#",{"id":"b","kind":"conv","kernel_h":1,"kernel_w":1,"base_out_channels":4,"searchable":false,"inputs":["in"]}"#,
            r#",{"id":"sum","kind":"add","inputs":["a","b"]}"#,
            r#",{"id":"c","kind":"conv","kernel_h":3,"kernel_w":3,"base_out_channels":8}"#
        ));
        let spec = ArchitectureSpec::parse(&text).unwrap();
        assert_eq!(spec.base_structure().0, vec![8]);
    }

    #[test]
    fn rejects_groups_not_dividing() {
        let text = doc(
            r#",{"id":"c","kind":"conv","kernel_h":3,"kernel_w":3,"groups":2,"base_out_channels":4}"#,
        );
        let err = ArchitectureSpec::parse(&text).unwrap_err();
        assert!(matches!(err, Error::Groups { .. }), "{err}");
    }

    #[test]
    fn groups_checked_per_structure() {
        let text = doc(concat!(
            r#",{"id":"a","kind":"conv","kernel_h":1,"kernel_w":1,"base_out_channels":4}"#,
            r#",{"id":"dw","kind":"conv","kernel_h":3,"kernel_w":3,"groups":4,"base_out_channels":4,"searchable":false}"#
        ));
        let spec = ArchitectureSpec::parse(&text).unwrap();
        assert!(spec.compute_cost(&sv(&[4])).is_ok());
        assert!(matches!(
            spec.compute_cost(&sv(&[2])),
            Err(Error::Groups { .. })
        ));
    }

    #[test]
    fn valid_padding_spatial() {
        let text = doc(
            r#",{"id":"c","kind":"conv","kernel_h":3,"kernel_w":3,"stride":2,"padding":"valid","base_out_channels":4}"#,
        );
        let spec = ArchitectureSpec::parse(&text).unwrap();
        // floor((8 - 3) / 2) + 1 = 3
        assert_eq!(spec.spatial_sizes()[1], (3, 3));

        let too_big = doc(
            r#",{"id":"c","kind":"conv","kernel_h":9,"kernel_w":9,"padding":"valid","base_out_channels":4}"#,
        );
        assert!(matches!(
            ArchitectureSpec::parse(&too_big),
            Err(Error::Spatial { .. })
        ));
    }

    #[test]
    fn same_padding_with_stride_rounds_up() {
        let text = r#"{"name":"x","input_shape":[3,7,7],"layers":[{"id":"in","kind":"input"},
            {"id":"c","kind":"conv","kernel_h":3,"kernel_w":3,"stride":2,"base_out_channels":4}]}"#;
        let spec = ArchitectureSpec::parse(text).unwrap();
        assert_eq!(spec.spatial_sizes()[1], (4, 4));
    }

    #[test]
    fn tie_group_width_mismatch() {
        let text = doc(concat!(
            r#",{"id":"a","kind":"conv","kernel_h":1,"kernel_w":1,"base_out_channels":4,"tie_group":"g"}"#,
            r#",{"id":"b","kind":"conv","kernel_h":1,"kernel_w":1,"base_out_channels":8,"tie_group":"g"}"#
        ));
        assert!(ArchitectureSpec::parse(&text).is_err());
    }

    #[test]
    fn flops_shares_sum_to_one() {
        for name in BUNDLED {
            let spec = ArchitectureSpec::load(name).unwrap();
            let shares = spec.flops_shares();
            assert_eq!(shares.len(), spec.num_variables());
            assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(shares.iter().all(|&w| w > 0.0));
        }
    }
}
