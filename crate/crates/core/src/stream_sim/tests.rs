use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::balancer::LayerAlloc;
use crate::fixed_point::{Activation, FxFormat};
use crate::model_ir::LayerParams;
use crate::oracle::{run_network_ref, Mode, NetworkOutput};
use crate::synth::{random_graph, random_input, random_params, random_plan, GraphLimits};

fn fx(t: u32, f: u32) -> Precision {
    Precision::Fixed(FxFormat::new(t, f).unwrap())
}

fn conv(x: usize, c_in: usize, k: usize, s: usize, p: usize, c_out: usize) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Conv,
        x_in: x,
        y_in: x,
        c_in,
        k_x: k,
        k_y: k,
        s_x: s,
        s_y: s,
        p_x: p,
        p_y: p,
        c_out,
        w_fmt: fx(8, 4),
        a_fmt: fx(8, 4),
        act_fn: Activation::Relu,
        has_bias: false,
    }
}

fn plan(pairs: &[(usize, usize)]) -> AllocationPlan {
    AllocationPlan {
        layers: pairs
            .iter()
            .map(|&(pe, simd)| LayerAlloc { pe, simd })
            .collect(),
    }
}

#[test]
fn window_sequence_channel_first() {
    let seq = window_sequence(&conv(2, 2, 1, 1, 0, 1));
    let coords: Vec<(isize, isize, usize)> = seq.iter().map(|w| (w.x, w.y, w.c)).collect();
    assert_eq!(
        coords,
        vec![
            (0, 0, 0),
            (0, 0, 1),
            (1, 0, 0),
            (1, 0, 1),
            (0, 1, 0),
            (0, 1, 1),
            (1, 1, 0),
            (1, 1, 1)
        ]
    );
}

#[test]
fn window_sequence_flags_padding() {
    let seq = window_sequence(&conv(4, 2, 3, 1, 1, 1));
    assert!(seq[..6].iter().all(|w| w.padded && w.y == -1));
    // Row 0 of the window: x = -1 is padding, x = 0 is not.
    assert!(seq[6].padded && seq[6].x == -1);
    assert!(!seq[8].padded && (seq[8].x, seq[8].y) == (0, 0));
}

#[test]
fn window_sequence_reuse_counts() {
    // Each input element of a 4x4 map is visited once per window covering it.
    let l = conv(4, 1, 3, 1, 0, 1);
    let mut hits = [[0usize; 4]; 4];
    for w in window_sequence(&l) {
        hits[w.y as usize][w.x as usize] += 1;
    }
    for y in 0..4 {
        for x in 0..4 {
            let covers = |v: usize| (0..2).filter(|o| *o <= v && v < o + 3).count();
            assert_eq!(hits[y][x], covers(y) * covers(x));
        }
    }
    assert_eq!(hits.iter().flatten().sum::<usize>(), 4 * 9);
}

fn unit_params(graph: &ModelGraph) -> ParamSet {
    let layers = graph
        .layers()
        .iter()
        .map(|l| LayerParams {
            weights: (0..l.weight_count()).map(|i| (i % 5) as i32 - 2).collect(),
            bias: if l.has_bias {
                vec![1; l.c_out]
            } else {
                Vec::new()
            },
        })
        .collect();
    ParamSet::new(graph, layers).unwrap()
}

#[test]
fn structure_of_built_pipelines() {
    let fc = ModelGraph::new(
        "fc",
        fx(8, 4),
        vec![LayerSpec {
            w_fmt: fx(8, 4),
            a_fmt: fx(8, 4),
            act_fn: Activation::None,
            ..LayerSpec::fc(3, 3, 2, 4)
        }],
    )
    .unwrap();
    let sim = build_pipeline(&fc, &AllocationPlan::minimal(&fc), &unit_params(&fc)).unwrap();
    assert!(sim.blocks()[0].window_buffer().is_none());
    assert_eq!(sim.blocks()[0].stage_kind(), InputStageKind::Cache);

    let g = ModelGraph::new(
        "three",
        fx(8, 4),
        vec![
            conv(6, 1, 3, 1, 1, 4),
            conv(6, 4, 3, 1, 1, 4),
            conv(6, 4, 2, 2, 0, 2),
        ],
    )
    .unwrap();
    let sim = build_pipeline(&g, &AllocationPlan::minimal(&g), &unit_params(&g)).unwrap();
    assert_eq!(sim.blocks().len(), 3);
    for (b, l) in sim.blocks().iter().zip(g.layers()) {
        let w = b.window_buffer().unwrap();
        assert_eq!(w.capacity(), (l.k_y + l.s_y) * l.x_in * l.c_in);
        assert_eq!(b.output_fifo().capacity(), 2 * l.c_out);
    }
}

#[test]
fn weight_memory_is_interleaved_by_channel() {
    let l = LayerSpec {
        c_out: 4,
        ..conv(2, 1, 1, 1, 0, 4)
    };
    let g = ModelGraph::new("w", fx(8, 4), vec![l]).unwrap();
    let params = ParamSet::new(
        &g,
        vec![LayerParams {
            weights: vec![10, 11, 12, 13],
            bias: Vec::new(),
        }],
    )
    .unwrap();
    let sim = build_pipeline(&g, &plan(&[(2, 1)]), &params).unwrap();
    let pe = sim.blocks()[0].pe_group();
    assert_eq!(pe.words_per_pe(), 2);
    assert_eq!(pe.weight_word(0, 0), &[10]);
    assert_eq!(pe.weight_word(0, 1), &[12]);
    assert_eq!(pe.weight_word(1, 0), &[11]);
    assert_eq!(pe.weight_word(1, 1), &[13]);
}

fn run_one(g: &ModelGraph, p: &AllocationPlan, params: &ParamSet, input: &Tensor) -> SimOutcome {
    let opts = SimOptions {
        trace: true,
        ..SimOptions::default()
    };
    build_pipeline_with(g, p, params, opts)
        .unwrap()
        .run(input)
        .unwrap()
}

#[test]
fn busy_cycles_follow_lane_count() {
    let l = conv(5, 4, 3, 1, 1, 3);
    let g = ModelGraph::new("one", fx(8, 4), vec![l.clone()]).unwrap();
    let params = unit_params(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = random_input(&mut rng, &g);
    let base = run_one(&g, &plan(&[(1, 1)]), &params, &input);
    let macs = (l.positions() * l.c_out * l.window_elems()) as u64;
    assert_eq!(base.timing.layers[0].busy, macs);
    let wide = run_one(&g, &plan(&[(1, 4)]), &params, &input);
    assert_eq!(wide.timing.layers[0].busy * 4, macs);
    assert_eq!(base.output, wide.output);
}

#[test]
fn random_networks_match_oracle() {
    let limits = GraphLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let g = random_graph(&mut rng, &limits);
        let params = random_params(&mut rng, &g);
        let input = random_input(&mut rng, &g);
        let p = random_plan(&mut rng, &g);
        let expect = run_network_ref(&g, &params, &input, Mode::Quantized).unwrap();
        let got = run_one(&g, &p, &params, &input);
        assert_eq!(NetworkOutput::Quantized(got.output.clone()), expect);

        let forced = SimOptions {
            force_multiply: true,
            ..SimOptions::default()
        };
        let alt = build_pipeline_with(&g, &p, &params, forced)
            .unwrap()
            .run(&input)
            .unwrap();
        assert_eq!(alt.output, got.output);
        assert_eq!(alt.timing, got.timing);

        // Conservation and single reads.
        for (i, l) in g.layers().iter().enumerate() {
            assert_eq!(got.counts.accepted[i], l.input_elems() as u64);
            assert_eq!(got.counts.pushed[i], l.output_elems() as u64);
            assert_eq!(got.counts.popped[i], l.output_elems() as u64);
            let pushes = &got.trace.as_ref().unwrap().fifo_pushes[i];
            let mut sorted = pushes.clone();
            sorted.sort();
            assert_eq!(pushes, &sorted, "stream order of layer {i}");
        }
    }
}

#[test]
fn single_layer_model_is_exact() {
    let limits = GraphLimits {
        max_layers: 1,
        ..GraphLimits::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..60 {
        let g = random_graph(&mut rng, &limits);
        let params = random_params(&mut rng, &g);
        let input = random_input(&mut rng, &g);
        let p = random_plan(&mut rng, &g);
        let got = run_one(&g, &p, &params, &input);
        let model = throughput_model(&g, &p, 100.0);
        assert_eq!(model.timing.total_cycles, got.timing.total_cycles);
        assert_eq!(model.timing.layers, got.timing.layers);
    }
}

#[test]
fn runs_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_graph(&mut rng, &GraphLimits::default());
    let params = random_params(&mut rng, &g);
    let input = random_input(&mut rng, &g);
    let p = random_plan(&mut rng, &g);
    let sim = build_pipeline(&g, &p, &params).unwrap();
    let a = sim.run(&input).unwrap();
    let b = sim.run(&input).unwrap();
    assert_eq!(a.output, b.output);
    assert_eq!(a.timing, b.timing);
}

#[test]
fn shallow_fifo_is_rejected() {
    let g = ModelGraph::new("f", fx(8, 4), vec![conv(4, 2, 1, 1, 0, 4)]).unwrap();
    let opts = SimOptions {
        fifo_depth: Some(1),
        ..SimOptions::default()
    };
    let err = build_pipeline_with(&g, &plan(&[(2, 1)]), &unit_params(&g), opts).unwrap_err();
    assert!(matches!(err, SimError::FifoDepth { layer: 0, .. }));
}

#[test]
fn wrong_input_is_rejected() {
    let g = ModelGraph::new("f", fx(8, 4), vec![conv(4, 2, 1, 1, 0, 4)]).unwrap();
    let sim = build_pipeline(&g, &AllocationPlan::minimal(&g), &unit_params(&g)).unwrap();
    let bad = Tensor::zeros((4, 4, 3), fx(8, 4));
    assert!(matches!(sim.run(&bad), Err(SimError::Input { .. })));
}
