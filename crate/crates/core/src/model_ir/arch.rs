//! Architecture document: a JSON object with `name`, `input_bits`,
//! `input_frac` and an ordered `layers` array. Every layer object carries
//! exactly the keys of [`LayerDoc`]; a width of one bit selects binary.

use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, ModelError, ModelGraph};
use crate::fixed_point::{Activation, Precision};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchDoc {
    name: String,
    input_bits: u32,
    input_frac: u32,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: String,
    x_in: usize,
    y_in: usize,
    c_in: usize,
    k_x: usize,
    k_y: usize,
    s_x: usize,
    s_y: usize,
    p_x: usize,
    p_y: usize,
    c_out: usize,
    w_bits: u32,
    w_frac: u32,
    a_bits: u32,
    a_frac: u32,
    act_fn: String,
    has_bias: bool,
}

fn activation_from_name(name: &str) -> Option<Activation> {
    match name {
        "None" => Some(Activation::None),
        "ReLU" => Some(Activation::Relu),
        "BinarySign" => Some(Activation::BinarySign),
        _ => None,
    }
}

impl LayerDoc {
    fn into_spec(self, layer: usize) -> Result<LayerSpec, ModelError> {
        let kind = LayerKind::from_name(&self.kind).ok_or(ModelError::UnsupportedKind {
            layer,
            kind: self.kind.clone(),
        })?;
        let act_fn =
            activation_from_name(&self.act_fn).ok_or(ModelError::UnsupportedActivation {
                layer,
                name: self.act_fn.clone(),
            })?;
        let w_fmt = Precision::from_bits(self.w_bits, self.w_frac)
            .map_err(|source| ModelError::Format { layer, source })?;
        let a_fmt = Precision::from_bits(self.a_bits, self.a_frac)
            .map_err(|source| ModelError::Format { layer, source })?;
        Ok(LayerSpec {
            kind,
            x_in: self.x_in,
            y_in: self.y_in,
            c_in: self.c_in,
            k_x: self.k_x,
            k_y: self.k_y,
            s_x: self.s_x,
            s_y: self.s_y,
            p_x: self.p_x,
            p_y: self.p_y,
            c_out: self.c_out,
            w_fmt,
            a_fmt,
            act_fn,
            has_bias: self.has_bias,
        })
    }

    fn from_spec(l: &LayerSpec) -> Self {
        Self {
            kind: l.kind.name().to_string(),
            x_in: l.x_in,
            y_in: l.y_in,
            c_in: l.c_in,
            k_x: l.k_x,
            k_y: l.k_y,
            s_x: l.s_x,
            s_y: l.s_y,
            p_x: l.p_x,
            p_y: l.p_y,
            c_out: l.c_out,
            w_bits: l.w_fmt.total_bits(),
            w_frac: l.w_fmt.frac_bits(),
            a_bits: l.a_fmt.total_bits(),
            a_frac: l.a_fmt.frac_bits(),
            act_fn: l.act_fn.name().to_string(),
            has_bias: l.has_bias,
        }
    }
}

/// Parse and validate an architecture document.
pub fn parse_architecture(text: &str) -> Result<ModelGraph, ModelError> {
    let doc: ArchDoc = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let input_fmt =
        Precision::from_bits(doc.input_bits, doc.input_frac).map_err(ModelError::InputFormat)?;
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.into_spec(i))
        .collect::<Result<Vec<_>, _>>()?;
    ModelGraph::new(doc.name, input_fmt, layers)
}

/// Canonical text of a graph; parsing it yields an identical graph.
pub fn to_architecture_text(graph: &ModelGraph) -> String {
    let doc = ArchDoc {
        name: graph.name().to_string(),
        input_bits: graph.input_fmt().total_bits(),
        input_frac: graph.input_fmt().frac_bits(),
        layers: graph.layers().iter().map(LayerDoc::from_spec).collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("architecture document serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_graph, GraphLimits};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ONE_CONV: &str = r#"{
      "name": "one",
      "input_bits": 8, "input_frac": 0,
      "layers": [
        {"kind": "Conv", "x_in": 28, "y_in": 28, "c_in": 1, "k_x": 3, "k_y": 3,
         "s_x": 1, "s_y": 1, "p_x": 1, "p_y": 1, "c_out": 8,
         "w_bits": 8, "w_frac": 4, "a_bits": 8, "a_frac": 2,
         "act_fn": "ReLU", "has_bias": true}
      ]
    }"#;

    #[test]
    fn parses_same_padding_conv() {
        let g = parse_architecture(ONE_CONV).unwrap();
        assert_eq!(g.len(), 1);
        let l = &g.layers()[0];
        assert_eq!((l.x_out(), l.y_out(), l.c_out), (28, 28, 8));
        assert_eq!(l.act_fn, Activation::Relu);
        assert_eq!(g.input_fmt().total_bits(), 8);
    }

    #[test]
    fn syntax_error_reports_position() {
        let broken = ONE_CONV.replace("\"c_out\": 8,", "\"c_out\": 8");
        match parse_architecture(&broken).unwrap_err() {
            ModelError::Syntax { line, column, .. } => {
                assert_eq!(line, 7);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_unknown_keys_are_syntax_errors() {
        let missing = ONE_CONV.replace("\"has_bias\": true", "\"has_bias\": true, \"extra\": 1");
        assert!(matches!(
            parse_architecture(&missing),
            Err(ModelError::Syntax { .. })
        ));
        let missing = ONE_CONV.replace("\"s_x\": 1, ", "");
        assert!(matches!(
            parse_architecture(&missing),
            Err(ModelError::Syntax { .. })
        ));
    }

    #[test]
    fn unsupported_kind() {
        let text = ONE_CONV.replace("\"Conv\"", "\"MaxPool\"");
        assert_eq!(
            parse_architecture(&text),
            Err(ModelError::UnsupportedKind {
                layer: 0,
                kind: "MaxPool".into()
            })
        );
    }

    #[test]
    fn fc_with_short_kernel_rejected() {
        let text = ONE_CONV
            .replace("\"Conv\"", "\"FC\"")
            .replace("\"p_x\": 1, \"p_y\": 1", "\"p_x\": 0, \"p_y\": 0");
        assert_eq!(
            parse_architecture(&text),
            Err(ModelError::FcKernel { layer: 0 })
        );
    }

    proptest! {
        #[test]
        fn text_round_trip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, &GraphLimits::default());
            let text = to_architecture_text(&g);
            prop_assert_eq!(parse_architecture(&text).unwrap(), g);
        }
    }
}
