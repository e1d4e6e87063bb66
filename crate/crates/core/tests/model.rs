use hgnn::encoder::{assemble_graph, build_vision_graph, GraphConfig};
use hgnn::geometry::{dist2, PointCloud, Pose, Vec3};
use hgnn::model::*;
use hgnn::sim::{default_library, CameraModel, Dataset, GripperConfig};
use hgnn_autodiff::{
    grad_check_with, BoundParams, GradCheckOptions, ParamStore, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Operator with every parameter (gains and biases included) drawn at random.
fn random_operator(rng: &mut ChaCha8Rng, dim: usize) -> (MpParams, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let params = MpParams::new(&mut store, rng, "op", dim);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
    }
    (params, store)
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<(usize, usize)> {
    let mut list = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(density) {
                list.push((a, b));
            }
        }
    }
    list
}

fn run_round(
    params: &MpParams,
    store: &ParamStore<f64>,
    nodes: &Tensor<f64>,
    edges: &Tensor<f64>,
    list: &[(usize, usize)],
) -> (Tensor<f64>, Option<Tensor<f64>>) {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let n = tape.constant(nodes.clone());
    let e = (!list.is_empty()).then(|| tape.constant(edges.clone()));
    let (n2, e2) = mp_round(&mut tape, &p, params, n, e, list).unwrap();
    (tape.value(n2).clone(), e2.map(|v| tape.value(v).clone()))
}

// Plain-loop reference for one operator.

fn oracle_mlp(store: &ParamStore<f64>, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let dense = |l: &Linear, x: &[f64]| -> Vec<f64> {
        let (w, b) = (store.get(l.w), store.get(l.b));
        (0..l.fan_out)
            .map(|j| b.get(0, j) + (0..l.fan_in).map(|i| x[i] * w.get(i, j)).sum::<f64>())
            .collect()
    };
    let h: Vec<f64> = dense(&mlp.hidden, x)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let y = dense(&mlp.out, &h);
    let Some(ln) = &mlp.norm else { return y };
    let d = y.len() as f64;
    let mean = y.iter().sum::<f64>() / d;
    let c: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = norm.max(LayerNorm::EPS * d.sqrt()) / d.sqrt();
    let (g, b) = (store.get(ln.gain), store.get(ln.bias));
    c.iter()
        .enumerate()
        .map(|(j, v)| v / denom * g.get(0, j) + b.get(0, j))
        .collect()
}

fn oracle_round(
    store: &ParamStore<f64>,
    params: &MpParams,
    nodes: &Tensor<f64>,
    edges: &Tensor<f64>,
    list: &[(usize, usize)],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let dim = nodes.cols();
    let mut new_edges = Vec::new();
    let mut agg = vec![vec![0.0; dim]; nodes.rows()];
    for (k, &(s, d)) in list.iter().enumerate() {
        let mut x = edges.row(k).to_vec();
        x.extend_from_slice(nodes.row(s));
        x.extend_from_slice(nodes.row(d));
        let e = oracle_mlp(store, &params.edge_fn, &x);
        for j in 0..dim {
            agg[d][j] += e[j];
        }
        new_edges.push(e);
    }
    let new_nodes = (0..nodes.rows())
        .map(|i| {
            let mut x = nodes.row(i).to_vec();
            x.extend_from_slice(&agg[i]);
            oracle_mlp(store, &params.node_fn, &x)
        })
        .collect();
    (new_nodes, new_edges)
}

fn assert_rows_close(t: &Tensor<f64>, rows: &[Vec<f64>], tol: f64) {
    assert_eq!(t.rows(), rows.len());
    for (r, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            assert!(
                (t.get(r, c) - v).abs() <= tol,
                "({r}, {c}): {} vs {v}",
                t.get(r, c)
            );
        }
    }
}

#[test]
fn mp_round_matches_plain_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 5;
    let (params, store) = random_operator(&mut rng, dim);
    // Node 3 has no incoming edges; node 0 has two.
    let list = [(1, 0), (2, 0), (0, 1), (0, 2), (3, 2)];
    let nodes = random_tensor(&mut rng, 4, dim);
    let edges = random_tensor(&mut rng, list.len(), dim);
    let (n2, e2) = run_round(&params, &store, &nodes, &edges, &list);
    let (on, oe) = oracle_round(&store, &params, &nodes, &edges, &list);
    assert_rows_close(&n2, &on, 1e-12);
    assert_rows_close(&e2.unwrap(), &oe, 1e-12);
}

#[test]
fn isolated_nodes_see_zero_messages() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (params, store) = random_operator(&mut rng, 3);
    let nodes = random_tensor(&mut rng, 2, 3);
    let (n2, e2) = run_round(&params, &store, &nodes, &Tensor::zeros(0, 3), &[]);
    assert!(e2.is_none());
    let (on, _) = oracle_round(&store, &params, &nodes, &Tensor::zeros(0, 3), &[]);
    assert_rows_close(&n2, &on, 1e-12);
}

#[test]
fn mp_round_rejects_mismatched_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (params, store) = random_operator(&mut rng, 4);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let nodes = tape.constant(random_tensor(&mut rng, 3, 4));
    let edges = tape.constant(random_tensor(&mut rng, 2, 4));
    assert!(mp_round(&mut tape, &p, &params, nodes, Some(edges), &[(0, 1)]).is_err());
    assert!(mp_round(
        &mut tape,
        &p,
        &params,
        nodes,
        Some(edges),
        &[(0, 1), (0, 7)]
    )
    .is_err());
    assert!(mp_round(&mut tape, &p, &params, nodes, None, &[(0, 1)]).is_err());
    let wide = tape.constant(random_tensor(&mut rng, 3, 5));
    assert!(mp_round(&mut tape, &p, &params, wide, None, &[]).is_err());
}

fn random_state(
    tape: &mut Tape<f64>,
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    dim: usize,
) -> GraphState {
    let mut edges = |tape: &mut Tape<f64>, len: usize| {
        (len > 0).then(|| tape.constant(random_tensor(rng, len, dim)))
    };
    let vision_edges = edges(tape, topo.vision.len());
    let touch_edges = edges(tape, topo.touch.len());
    let inter_edges = edges(tape, topo.inter.len());
    GraphState {
        vision: tape.constant(random_tensor(rng, topo.num_vision, dim)),
        touch: tape.constant(random_tensor(rng, topo.num_touch, dim)),
        vision_edges,
        touch_edges,
        inter_edges,
    }
}

fn values(tape: &Tape<f64>, s: &GraphState) -> Vec<Vec<f64>> {
    [
        Some(s.vision),
        Some(s.touch),
        s.vision_edges,
        s.touch_edges,
        s.inter_edges,
    ]
    .into_iter()
    .map(|v| v.map(|v| tape.value(v).data().to_vec()).unwrap_or_default())
    .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn mp_round_is_permutation_invariant(n in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let (params, store) = random_operator(&mut rng, dim);
        let list = random_edges(&mut rng, n, 0.3);
        let nodes = random_tensor(&mut rng, n, dim);
        let edges = random_tensor(&mut rng, list.len(), dim);

        // New node i is old node perm[i]; edges are relabeled and reordered.
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let mut order: Vec<usize> = (0..list.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let p_list: Vec<(usize, usize)> =
            order.iter().map(|&k| (inv[list[k].0], inv[list[k].1])).collect();
        let p_nodes = Tensor::from_rows(&perm.iter().map(|&i| nodes.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let p_edges = Tensor::from_rows(&order.iter().map(|&k| edges.row(k).to_vec()).collect::<Vec<_>>());
        let p_edges = p_edges.unwrap_or_else(|_| Tensor::zeros(0, dim));

        let (n2, e2) = run_round(&params, &store, &nodes, &edges, &list);
        let (pn2, pe2) = run_round(&params, &store, &p_nodes, &p_edges, &p_list);
        for i in 0..n {
            for c in 0..dim {
                prop_assert!((pn2.get(i, c) - n2.get(perm[i], c)).abs() <= 1e-12);
            }
        }
        if let (Some(e2), Some(pe2)) = (e2, pe2) {
            for (r, &k) in order.iter().enumerate() {
                for c in 0..dim {
                    prop_assert!((pe2.get(r, c) - e2.get(k, c)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn mp_round_is_one_hop_local(n in 2usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let (params, store) = random_operator(&mut rng, dim);
        let list = random_edges(&mut rng, n, 0.25);
        let nodes = random_tensor(&mut rng, n, dim);
        let edges = random_tensor(&mut rng, list.len(), dim);
        let j = rng.random_range(0..n);
        let mut moved = nodes.clone();
        for c in 0..dim {
            moved.data_mut()[j * dim + c] += 0.5;
        }
        let (a, ea) = run_round(&params, &store, &nodes, &edges, &list);
        let (b, eb) = run_round(&params, &store, &moved, &edges, &list);
        // Reached rows usually change, but a dead ReLU layer may hide the
        // perturbation, so only the unreached side is exact.
        for k in 0..n {
            if k != j && !list.contains(&(j, k)) {
                prop_assert!(a.row(k) == b.row(k), "node {} after moving node {}", k, j);
            }
        }
        if let (Some(ea), Some(eb)) = (ea, eb) {
            for (r, &(s, d)) in list.iter().enumerate() {
                if s != j && d != j {
                    prop_assert!(ea.row(r) == eb.row(r));
                }
            }
        }
    }

    #[test]
    fn two_rounds_compose_exactly(nv in 1usize..8, nt in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 5;
        let mut store = ParamStore::new();
        let rounds: Vec<RoundParams> =
            (0..2).map(|r| RoundParams::new(&mut store, &mut rng, &format!("mp{r}"), dim)).collect();
        let vision = random_edges(&mut rng, nv, 0.4);
        let touch = random_edges(&mut rng, nt, 0.4);
        let mut inter = Vec::new();
        for v in 0..nv {
            for t in 0..nt {
                if rng.random_bool(0.3) {
                    inter.push((v, nv + t));
                    inter.push((nv + t, v));
                }
            }
        }
        let topo = Topology { num_vision: nv, num_touch: nt, vision: &vision, touch: &touch, inter: &inter };
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let s0 = random_state(&mut tape, &mut rng, &topo, dim);
        let both = process(&mut tape, &p, &rounds, &topo, s0).unwrap();
        let s1 = hierarchical_round(&mut tape, &p, &rounds[0], &topo, s0).unwrap();
        let s2 = hierarchical_round(&mut tape, &p, &rounds[1], &topo, s1).unwrap();
        prop_assert_eq!(values(&tape, &both), values(&tape, &s2));
    }
}

#[test]
fn hierarchical_round_keeps_modalities_apart_before_fusion() {
    // Without inter edges, touch states cannot influence vision states.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 4;
    let mut store = ParamStore::new();
    let round = RoundParams::new(&mut store, &mut rng, "mp0", dim);
    let vision = vec![(0, 1), (1, 0)];
    let touch = vec![(0, 1)];
    let topo = Topology {
        num_vision: 2,
        num_touch: 2,
        vision: &vision,
        touch: &touch,
        inter: &[],
    };
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let s = random_state(&mut tape, &mut rng, &topo, dim);
    let a = hierarchical_round(&mut tape, &p, &round, &topo, s).unwrap();
    let other = tape.constant(random_tensor(&mut rng, 2, dim));
    let b = hierarchical_round(
        &mut tape,
        &p,
        &round,
        &topo,
        GraphState { touch: other, ..s },
    )
    .unwrap();
    assert_eq!(tape.value(a.vision).data(), tape.value(b.vision).data());
    assert_ne!(tape.value(a.touch).data(), tape.value(b.touch).data());
}

// Decoder and objective.

fn outputs(
    tape: &mut Tape<f64>,
    quats: &[[f64; 4]],
    trans: &[Vec3],
    logits: &[f64],
) -> NodeOutputs {
    let n = quats.len();
    let q: Vec<f64> = quats.iter().flatten().copied().collect();
    let t: Vec<f64> = trans.iter().flatten().copied().collect();
    let quaternion = tape.constant(Tensor::new(n, 4, q).unwrap());
    let translation = tape.constant(Tensor::new(n, 3, t).unwrap());
    let logit = tape.constant(Tensor::new(n, 1, logits.to_vec()).unwrap());
    let confidence = tape.sigmoid(logit);
    NodeOutputs {
        quaternion,
        translation,
        confidence,
        logit,
        degenerate: 0,
    }
}

const ID: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

#[test]
fn nodewise_loss_of_a_pure_offset_is_its_length() {
    let mut tape = Tape::new();
    let out = outputs(
        &mut tape,
        &[ID, ID],
        &[[0.0, 0.03, 0.04], [0.0; 3]],
        &[0.0, 0.0],
    );
    let pts = [[0.1, 0.0, 0.0], [0.0, -0.2, 0.05], [0.3, 0.3, 0.3]];
    let l = nodewise_loss(
        &mut tape,
        out.quaternion,
        out.translation,
        &Pose::identity(),
        &pts,
    )
    .unwrap();
    let l = tape.value(l);
    assert_eq!(l.shape(), [1, 2]);
    assert!((l.get(0, 0) - 0.05).abs() < 1e-15);
    assert_eq!(l.get(0, 1), 0.0);
}

#[test]
fn nodewise_loss_of_a_half_turn() {
    // 180 degrees about z maps (x, y, z) to (-x, -y, z).
    let mut tape = Tape::new();
    let out = outputs(&mut tape, &[[0.0, 0.0, 0.0, 1.0]], &[[0.0; 3]], &[0.0]);
    let pts = [[1.0, 0.0, 0.0], [0.0, 2.0, 5.0]];
    let l = nodewise_loss(
        &mut tape,
        out.quaternion,
        out.translation,
        &Pose::identity(),
        &pts,
    )
    .unwrap();
    assert!((tape.value(l).get(0, 0) - 3.0).abs() < 1e-12);
}

#[test]
fn total_loss_matches_hand_computation() {
    let mut tape = Tape::new();
    // Node losses are the offset lengths: 0.01, 0.02, 0.5, 0.03, 0.04.
    let trans = [
        [0.01, 0.0, 0.0],
        [0.0, 0.02, 0.0],
        [0.0, 0.0, 0.5],
        [0.0, 0.0, -0.03],
        [0.04, 0.0, 0.0],
    ];
    let logits = [1.0, 2.0, -3.0, 0.5, 1.5];
    let out = outputs(&mut tape, &[ID; 5], &trans, &logits);
    let pts = [[0.0; 3], [0.1, 0.1, 0.1]];
    let lambda = 0.1;
    let loss = total_loss(&mut tape, &out, &Pose::identity(), &pts, 2, lambda).unwrap();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    // K = 2 keeps the two most confident nodes (logits 2 and 1.5).
    let expected = ((0.02 * sig(2.0) - lambda * sig(2.0).ln())
        + (0.04 * sig(1.5) - lambda * sig(1.5).ln()))
        / 2.0;
    assert!((tape.value(loss).item() - expected).abs() < 1e-14);
    // K larger than the node count averages over all of them.
    let all = total_loss(&mut tape, &out, &Pose::identity(), &pts, 10, 0.0).unwrap();
    let expected =
        (0.01 * sig(1.0) + 0.02 * sig(2.0) + 0.5 * sig(-3.0) + 0.03 * sig(0.5) + 0.04 * sig(1.5))
            / 5.0;
    assert!((tape.value(all).item() - expected).abs() < 1e-14);
}

#[test]
fn perfect_poses_leave_only_the_regularizer() {
    let mut tape = Tape::new();
    let logits = [0.0, 3.0, -1.0];
    let out = outputs(&mut tape, &[ID; 3], &[[0.0; 3]; 3], &logits);
    let lambda = 0.2;
    let loss = total_loss(
        &mut tape,
        &out,
        &Pose::identity(),
        &[[0.05, 0.0, 0.0]],
        128,
        lambda,
    )
    .unwrap();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let expected = -lambda / 3.0 * logits.iter().map(|&x| sig(x).ln()).sum::<f64>();
    let got = tape.value(loss).item();
    assert!(got > 0.0 && (got - expected).abs() < 1e-14);
    // The regularizer vanishes as the confidence approaches one.
    let sure = outputs(&mut tape, &[ID], &[[0.0; 3]], &[40.0]);
    let loss = total_loss(
        &mut tape,
        &sure,
        &Pose::identity(),
        &[[0.05, 0.0, 0.0]],
        1,
        lambda,
    )
    .unwrap();
    assert!(tape.value(loss).item() < 1e-15);
}

#[test]
fn total_loss_is_finite_for_saturated_confidence() {
    let mut tape = Tape::<f32>::new();
    let logit = tape.leaf(Tensor::new(2, 1, vec![-150.0, 150.0]).unwrap());
    let out = NodeOutputs {
        quaternion: tape
            .constant(Tensor::new(2, 4, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap()),
        translation: tape.constant(Tensor::zeros(2, 3)),
        confidence: tape.sigmoid(logit),
        logit,
        degenerate: 0,
    };
    let loss = total_loss(&mut tape, &out, &Pose::identity(), &[[0.0; 3]], 2, 0.1).unwrap();
    assert!((tape.value(loss).item() - 7.5).abs() < 1e-4);
    let g = tape.backward(loss).unwrap();
    assert!(g.get_data(logit).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn total_loss_rejects_bad_arguments() {
    let mut tape = Tape::new();
    let out = outputs(&mut tape, &[ID], &[[0.0; 3]], &[0.0]);
    assert!(total_loss(&mut tape, &out, &Pose::identity(), &[[0.0; 3]], 0, 0.1).is_err());
    assert!(total_loss(&mut tape, &out, &Pose::identity(), &[[0.0; 3]], 1, -1.0).is_err());
    assert!(total_loss(&mut tape, &out, &Pose::identity(), &[], 1, 0.1).is_err());
}

#[test]
fn selection_and_top_k_break_ties_low() {
    assert_eq!(top_k(&[0.5, 0.9, 0.9, 0.1], 2), vec![1, 2]);
    assert_eq!(top_k(&[0.5, 0.9], 5), vec![1, 0]);
    let pose = select_pose(&[pred(0.2, 1.0), pred(0.7, 2.0), pred(0.7, 3.0)]).unwrap();
    assert_eq!(pose.translation, [2.0, 0.0, 0.0]);
    let pose = select_pose(&[pred(0.4, 5.0), pred(0.4, 6.0)]).unwrap();
    assert_eq!(pose.translation, [5.0, 0.0, 0.0]);
    assert!(select_pose(&[]).is_err());
}

fn pred(c: f64, x: f64) -> NodePrediction {
    NodePrediction {
        quaternion: ID,
        translation: [x, 0.0, 0.0],
        confidence: c,
    }
}

proptest! {
    #[test]
    fn total_loss_is_non_negative(
        logits in prop::collection::vec(-30.0f64..30.0, 1..8),
        offsets in prop::collection::vec(prop::array::uniform3(-0.2f64..0.2), 8),
        k in 1usize..10,
        lambda in 0.0f64..1.0,
    ) {
        let n = logits.len();
        let mut tape = Tape::new();
        let out = outputs(&mut tape, &vec![ID; n], &offsets[..n], &logits);
        let loss = total_loss(&mut tape, &out, &Pose::identity(), &[[0.01, 0.02, 0.0]], k, lambda).unwrap();
        prop_assert!(tape.value(loss).item() >= 0.0);
    }

    #[test]
    fn selection_ignores_monotone_rescaling(
        conf in prop::collection::vec(0.01f64..1.0, 1..10),
        a in 0.1f64..10.0,
        b in 0.0f64..5.0,
    ) {
        let preds: Vec<NodePrediction> =
            conf.iter().enumerate().map(|(i, &c)| pred(c, i as f64)).collect();
        let moved: Vec<NodePrediction> = preds
            .iter()
            .map(|p| NodePrediction { confidence: a * p.confidence.powi(3) + b, ..*p })
            .collect();
        prop_assert_eq!(select_pose(&preds).unwrap(), select_pose(&moved).unwrap());
    }
}

#[test]
fn decoder_anchors_translations_and_normalizes_quaternions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let head = Mlp::new(&mut store, &mut rng, "head", 4, 4, 8);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let nodes = tape.constant(random_tensor(&mut rng, 3, 4));
    let anchors = [[0.0, 0.0, 0.5], [0.1, 0.0, 0.5], [0.0, 0.2, 0.6]];
    let out = decode_nodewise(&mut tape, &p, &head, nodes, &anchors).unwrap();
    let raw = head.forward(&mut tape, &p, nodes).unwrap();
    let (raw, t) = (tape.value(raw).clone(), tape.value(out.translation).clone());
    for (i, a) in anchors.iter().enumerate() {
        for c in 0..3 {
            let expected = a[c] + TRANSLATION_UNIT * raw.get(i, 4 + c);
            assert!((t.get(i, c) - expected).abs() < 1e-15);
        }
        let q = tape.value(out.quaternion).row(i).to_vec();
        assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        let c = tape.value(out.confidence).get(i, 0);
        assert!(c > 0.0 && c < 1.0);
    }
    assert!(decode_nodewise(&mut tape, &p, &head, nodes, &anchors[..2]).is_err());
}

// Whole-model checks on a real, shrunken observation.

fn one_sample(seed: u64) -> Dataset {
    Dataset::generate(
        1,
        default_library(0).unwrap(),
        GripperConfig::default(),
        CameraModel::default(),
        seed,
    )
    .unwrap()
}

/// At most `nv` vision nodes clustered around one node and `nt` touch
/// points from the first sensor that has any.
fn micro_observation(ds: &Dataset, nv: usize, nt: usize) -> Observation {
    let s = &ds.samples[0];
    let cfg = GraphConfig::default();
    let (vision, _, voxel) =
        build_vision_graph(&s.vision_cloud, ds.object(s).diameter, &cfg).unwrap();
    let mut vision = vision;
    let first = vision[0];
    vision.sort_by(|a, b| dist2(*a, first).total_cmp(&dist2(*b, first)));
    vision.truncate(nv);
    let mut kept = false;
    let clouds: Vec<PointCloud> = s
        .touch_clouds
        .iter()
        .map(|c| {
            if kept || c.points.is_empty() {
                PointCloud::new(Vec::new())
            } else {
                kept = true;
                PointCloud::new(c.points.iter().take(nt).copied().collect())
            }
        })
        .collect();
    let graph = assemble_graph(vision, voxel, &clouds, s.sensor_locations.clone(), &cfg).unwrap();
    Observation::from_graph(graph, s, &ds.camera).unwrap()
}

fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        rounds: 2,
        hidden: 8,
        local_dim: 4,
        sensor_dim: 4,
        object_dim: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn composed_loss_gradients_match_finite_differences() {
    let ds = one_sample(11);
    let obs = micro_observation(&ds, 6, 4);
    assert!(obs.graph.num_nodes() <= 10);
    assert!(!obs.graph.vision_edges.is_empty() && !obs.graph.touch_edges.is_empty());
    let s = &ds.samples[0];
    let points: Vec<Vec3> = ds
        .object(s)
        .surface_points
        .iter()
        .step_by(40)
        .copied()
        .collect();
    let (model, store) = Model::new::<f64>(small_config(Variant::Full), 1).unwrap();
    let inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    let f = |tape: &mut Tape<f64>, vars: &[Var]| {
        let p = BoundParams::from_vars(vars.to_vec());
        Ok(model.loss(tape, &p, &obs, &s.pose_gt, &points).unwrap().0)
    };
    let opts = GradCheckOptions {
        max_coords_per_input: Some(4),
        seed: 1,
        ..Default::default()
    };
    let report = grad_check_with(f, &inputs, opts).unwrap();
    assert!(report.coords_checked > 4 * 40);
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

fn parameter_gradients(variant: Variant) -> Vec<(String, f64)> {
    let ds = one_sample(12);
    let obs = micro_observation(&ds, 6, 4);
    let s = &ds.samples[0];
    let (model, store) = Model::new::<f64>(small_config(variant), 1).unwrap();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let (loss, _) = model
        .loss(
            &mut tape,
            &p,
            &obs,
            &s.pose_gt,
            &[[0.0; 3], [0.01, 0.0, 0.0]],
        )
        .unwrap();
    let g = tape.backward(loss).unwrap();
    let grads = p.gradients(&tape, &g);
    store
        .ids()
        .map(|id| (store.name(id).to_string(), grads.get(id).unwrap().norm()))
        .collect()
}

#[test]
fn ablations_cut_the_masked_encoders_off() {
    let full = parameter_gradients(Variant::Full);
    assert!(full
        .iter()
        .filter(|(n, _)| n.starts_with("enc."))
        .all(|(_, g)| *g > 0.0));
    for (variant, cut) in [(Variant::NoVis, "enc."), (Variant::NoProp, "enc.sensor")] {
        for (name, g) in parameter_gradients(variant) {
            if name.starts_with(cut) {
                assert_eq!(g, 0.0, "{variant}: {name}");
            } else if name.starts_with("enc.") {
                assert!(g > 0.0, "{variant}: {name}");
            }
        }
    }
}

#[test]
fn no_prop_ignores_sensor_locations() {
    let ds = one_sample(13);
    let obs = micro_observation(&ds, 6, 4);
    let mut moved = obs.clone();
    for l in &mut moved.graph.sensor_locations {
        l[0] += 0.05;
    }
    let run = |variant, obs: &Observation| {
        let (model, store) = Model::new::<f64>(small_config(variant), 1).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let out = model.forward(&mut tape, &p, obs).unwrap();
        tape.value(out.translation).data().to_vec()
    };
    assert_eq!(run(Variant::NoProp, &obs), run(Variant::NoProp, &moved));
    assert_ne!(run(Variant::Full, &obs), run(Variant::Full, &moved));
}

#[test]
fn flat_processor_has_a_third_of_the_parameters() {
    for rounds in 1..4 {
        let cfg = |variant| ModelConfig {
            variant,
            rounds,
            ..ModelConfig::default()
        };
        let (full, fs) = Model::new::<f32>(cfg(Variant::Full), 0).unwrap();
        let (flat, ls) = Model::new::<f32>(cfg(Variant::NoHrch), 0).unwrap();
        assert!(matches!(flat.processor, Processor::Flat(ref r) if r.len() == rounds));
        assert_eq!(
            3 * flat.processor_param_count(&ls),
            full.processor_param_count(&fs)
        );
        assert_eq!(
            fs.num_scalars() - full.processor_param_count(&fs),
            ls.num_scalars() - flat.processor_param_count(&ls)
        );
    }
}

#[test]
fn initialization_is_seeded() {
    let (_, a) = Model::new::<f32>(ModelConfig::default(), 4).unwrap();
    let (_, b) = Model::new::<f32>(ModelConfig::default(), 4).unwrap();
    let (_, c) = Model::new::<f32>(ModelConfig::default(), 5).unwrap();
    let flat = |s: &ParamStore<f32>| {
        s.iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect::<Vec<_>>()
    };
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn full_model_forward_is_finite_and_bounded() {
    let ds = one_sample(14);
    let s = &ds.samples[0];
    let obs = Observation::new(
        s,
        &ds.camera,
        ds.object(s).diameter,
        &GraphConfig::default(),
    )
    .unwrap();
    let (model, store) = Model::new::<f32>(ModelConfig::default(), 0).unwrap();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let out = model.forward(&mut tape, &p, &obs).unwrap();
    assert!(tape.first_non_finite().is_none());
    let preds = node_predictions(&tape, &out);
    assert_eq!(preds.len(), obs.graph.num_nodes());
    // Untrained translations stay within a few decimeters of their node.
    for (pred, x) in preds.iter().zip(obs.node_positions()) {
        assert!(dist2(pred.translation, x).sqrt() < 0.5);
    }
}
