use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taco::adapt::{evaluate_instance, fine_tune, shrink_perturb, SpParams, TuneConfig};
use taco::decode::{decode, decode_traced};
use taco::gnn::{make_input, predict, ModelConfig, NodeProbabilities, ParameterSet};
use taco::graph::{
    format_graph, generate_dynamic, generate_er, generate_rb, parse_graph, Graph, RbParams,
};
use taco::objectives::{evaluate, Problem, ProblemKind};
use taco::oracle::{brute_force, greedy, solve_exact, DEFAULT_NODE_BUDGET};
use taco::tensor::{Tape, Tensor, Var};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], away_from_zero: bool) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let v: f64 = r.random_range(-2.0..2.0);
            if away_from_zero && v.abs() < 1e-2 {
                0.5
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check_graph_invariants(g: &Graph) {
    let mut prev = None;
    for &(i, j) in g.edges() {
        assert!(i < j && j < g.n());
        assert!(prev < Some((i, j)), "edges sorted and unique");
        prev = Some((i, j));
        assert!(g.has_edge(i, j) && g.has_edge(j, i));
    }
    let degree_sum: usize = (0..g.n()).map(|i| g.degree(i)).sum();
    assert_eq!(degree_sum, 2 * g.edge_count());
    for i in 0..g.n() {
        let nb = g.neighbors(i);
        assert!(nb.windows(2).all(|w| w[0] < w[1]));
        assert!(!nb.contains(&i));
    }
}

/// Gradient of `sum(w * f(inputs))` for a fixed random `w`, against central
/// differences on every input coordinate (norm-wise relative error).
fn check_primitive<'g, F>(inputs: Vec<Tensor>, seed: u64, f: F)
where
    F: Fn(&mut Tape<'g>, &[Var]) -> Var,
{
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        random_tensor(&mut rng(seed ^ 0xabc), tape.value(out).shape(), false)
    };
    let eval = |xs: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = vars
            .iter()
            .zip(xs)
            .map(|(v, x)| grads.get_or_zeros(*v, x.shape()))
            .collect();
        (tape.value(loss).item().unwrap(), g)
    };
    let (_, grads) = eval(&inputs);
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    for (k, input) in inputs.iter().enumerate() {
        for c in 0..input.len() {
            let moved = |delta: f64| {
                let mut xs = inputs.clone();
                xs[k].data_mut()[c] += delta;
                eval(&xs).0
            };
            let fd = (moved(H) - moved(-H)) / (2.0 * H);
            let a = grads[k].data()[c];
            let scale = a.abs().max(fd.abs()).max(norm).max(1e-6);
            assert!(
                (a - fd).abs() / scale < TOL,
                "input {k} coord {c}: analytic {a} fd {fd}"
            );
        }
    }
}

fn small_graph(seed: u64, max_n: usize) -> Graph {
    let mut r = rng(seed);
    let n = r.random_range(1..=max_n);
    generate_er(n, r.random_range(0.0..1.0), r.random()).unwrap()
}

fn random_perm(r: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    perm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matmul_gradient(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, &[m, k], false);
        let b = random_tensor(&mut r, &[k, n], false);
        check_primitive(vec![a, b], seed, |t, v| t.matmul(v[0], v[1]).unwrap());
    }

    #[test]
    fn elementwise_gradients(seed in any::<u64>(), m in 1usize..5, n in 1usize..5) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, &[m, n], true);
        let b = random_tensor(&mut r, &[m, n], false);
        check_primitive(vec![a.clone(), b.clone()], seed, |t, v| t.add(v[0], v[1]).unwrap());
        check_primitive(vec![a.clone(), b.clone()], seed, |t, v| t.sub(v[0], v[1]).unwrap());
        check_primitive(vec![a.clone(), b], seed, |t, v| t.mul(v[0], v[1]).unwrap());
        check_primitive(vec![a.clone()], seed, |t, v| t.relu(v[0]).unwrap());
        check_primitive(vec![a.clone()], seed, |t, v| t.sigmoid(v[0]).unwrap());
        check_primitive(vec![a.clone()], seed, |t, v| t.affine(v[0], -1.5, 0.25).unwrap());
        check_primitive(vec![a], seed, |t, v| t.sum(v[0]).unwrap());
    }

    #[test]
    fn broadcast_gradients(seed in any::<u64>(), m in 1usize..5, n in 1usize..5) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[m, n], false);
        let bias = random_tensor(&mut r, &[n], false);
        let s = random_tensor(&mut r, &[1], false);
        check_primitive(vec![x.clone(), bias], seed, |t, v| t.add_row(v[0], v[1]).unwrap());
        check_primitive(vec![s, x], seed, |t, v| t.scale_by(v[0], v[1]).unwrap());
    }

    #[test]
    fn aggregate_gradient(seed in any::<u64>(), d in 1usize..4) {
        let g = small_graph(seed, 8);
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[g.n(), d], false);
        let adj = g.adjacency();
        check_primitive(vec![x], seed, |t, v| t.neighbor_aggregate(v[0], adj).unwrap());
    }

    #[test]
    fn backward_is_deterministic(seed in any::<u64>()) {
        let g = small_graph(seed, 12);
        let params = ParameterSet::init(ModelConfig::default(), seed).unwrap();
        let input = make_input(&g, seed, 16).unwrap();
        let pr = Problem::mc(4.0).unwrap();
        let a = evaluate_instance(&params, &g, &input, &pr, true).unwrap();
        let b = evaluate_instance(&params, &g, &input, &pr, true).unwrap();
        prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        for (x, y) in a.grads.iter().zip(&b.grads) {
            prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn generators_produce_valid_graphs(seed in any::<u64>(), k in 2usize..6, a in 0.3f64..1.2, p in 0.05f64..1.0) {
        let rb = RbParams { k, a, p, rng_seed: seed };
        let g = generate_rb(&rb).unwrap();
        check_graph_invariants(&g);
        let s = (k as f64).powf(a).ceil() as usize;
        prop_assert_eq!(g.n(), k * s);
        for c in 0..k {
            for i in c * s..(c + 1) * s {
                for j in i + 1..(c + 1) * s {
                    prop_assert!(g.has_edge(i, j));
                }
            }
        }
        let er = small_graph(seed, 20);
        check_graph_invariants(&er);
        let stream = generate_dynamic(&er, 3, 0.1, seed).unwrap();
        for snap in stream.snapshots() {
            check_graph_invariants(snap);
            prop_assert_eq!(snap.n(), er.n());
        }
    }

    #[test]
    fn er_extremes(n in 1usize..25, seed in any::<u64>()) {
        prop_assert_eq!(generate_er(n, 1.0, seed).unwrap().edge_count(), n * (n - 1) / 2);
        prop_assert_eq!(generate_er(n, 0.0, seed).unwrap().edge_count(), 0);
    }

    #[test]
    fn edge_list_roundtrip(seed in any::<u64>()) {
        let g = small_graph(seed, 30);
        let text = format_graph(&g);
        let back = parse_graph(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(format_graph(&back), text);
    }

    #[test]
    fn gin_is_permutation_equivariant(seed in any::<u64>()) {
        let g = small_graph(seed, 20);
        let mut r = rng(seed);
        let perm = random_perm(&mut r, g.n());
        let params = ParameterSet::init(ModelConfig { learn_eps: seed % 2 == 0, ..ModelConfig::default() }, seed).unwrap();
        let input = make_input(&g, seed, 16).unwrap();
        let mut permuted = vec![0.0; input.len()];
        for i in 0..g.n() {
            permuted[perm[i] * 16..(perm[i] + 1) * 16].copy_from_slice(&input.data()[i * 16..(i + 1) * 16]);
        }
        let input_p = Tensor::new(vec![g.n(), 16], permuted).unwrap();
        let p = predict(&params, &g, &input).unwrap();
        let q = predict(&params, &g.permute(&perm).unwrap(), &input_p).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            prop_assert!((p.as_slice()[i] - q.as_slice()[pi]).abs() <= 1e-9);
        }
    }

    #[test]
    fn losses_are_permutation_invariant(seed in any::<u64>(), beta in 0.1f64..5.0) {
        let g = small_graph(seed, 15);
        let mut r = rng(seed);
        let perm = random_perm(&mut r, g.n());
        let p: Vec<f64> = (0..g.n()).map(|_| r.random::<f64>()).collect();
        let mut q = vec![0.0; g.n()];
        for i in 0..g.n() {
            q[perm[i]] = p[i];
        }
        let gp = g.permute(&perm).unwrap();
        for pr in [Problem::mvc(beta).unwrap(), Problem::mc(beta).unwrap()] {
            let a = pr.value(&g, &p).unwrap();
            let b = pr.value(&gp, &q).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn mvc_loss_monotone_in_beta(seed in any::<u64>(), b1 in 0.1f64..3.0, db in 0.01f64..3.0) {
        let g = small_graph(seed, 12);
        prop_assume!(g.edge_count() > 0);
        let mut r = rng(seed);
        let mut p: Vec<f64> = (0..g.n()).map(|_| r.random::<f64>()).collect();
        let (i, j) = g.edges()[r.random_range(0..g.edge_count())];
        p[i] = 0.0;
        p[j] = 0.0;
        let low = Problem::mvc(b1).unwrap().value(&g, &p).unwrap();
        let high = Problem::mvc(b1 + db).unwrap().value(&g, &p).unwrap();
        prop_assert!(high > low);
    }

    #[test]
    fn decode_is_feasible_deterministic_and_greedy_per_step(seed in any::<u64>(), beta in 0.1f64..5.0) {
        let g = small_graph(seed, 30);
        let mut r = rng(seed);
        let p = NodeProbabilities::new((0..g.n()).map(|_| r.random::<f64>()).collect()).unwrap();
        for kind in [ProblemKind::Mvc, ProblemKind::Mc] {
            let pr = Problem::new(kind, beta).unwrap();
            let sol = decode(&pr, &g, &p).unwrap();
            prop_assert!(sol.feasible);
            prop_assert_eq!(&decode(&pr, &g, &p).unwrap(), &sol);
            let (traced, steps) = decode_traced(&pr, &g, &p).unwrap();
            prop_assert_eq!(&traced, &sol);
            for s in steps {
                let (chosen, other) = if s.chose_one { (s.loss_if_one, s.loss_if_zero) } else { (s.loss_if_zero, s.loss_if_one) };
                prop_assert!(chosen <= other + 1e-9 * other.abs().max(1.0));
            }
        }
    }

    #[test]
    fn greedy_is_feasible(seed in any::<u64>()) {
        let g = small_graph(seed, 40);
        for kind in [ProblemKind::Mvc, ProblemKind::Mc] {
            let sol = greedy(kind, &g);
            prop_assert!(sol.feasible);
            prop_assert_eq!(evaluate(kind, &g, &sol.x).unwrap(), sol);
        }
    }

    #[test]
    fn exact_solvers_match_brute_force_and_duality(seed in any::<u64>()) {
        let g = small_graph(seed, 12);
        let mvc = solve_exact(ProblemKind::Mvc, &g, DEFAULT_NODE_BUDGET);
        let mc = solve_exact(ProblemKind::Mc, &g, DEFAULT_NODE_BUDGET);
        prop_assert!(!mvc.timed_out && !mc.timed_out);
        prop_assert_eq!(mvc.optimum, brute_force(ProblemKind::Mvc, &g).unwrap().optimum);
        prop_assert_eq!(mc.optimum, brute_force(ProblemKind::Mc, &g).unwrap().optimum);
        prop_assert!(evaluate(ProblemKind::Mvc, &g, &mvc.witness).unwrap().feasible);
        prop_assert!(evaluate(ProblemKind::Mc, &g, &mc.witness).unwrap().feasible);
        // independent sets of G are cliques of the complement
        let mis = brute_force(ProblemKind::Mc, &g.complement()).unwrap().optimum;
        prop_assert_eq!(mvc.optimum, g.n() - mis);
        let mvc_complement = brute_force(ProblemKind::Mvc, &g.complement()).unwrap().optimum;
        prop_assert_eq!(mc.optimum, g.n() - mvc_complement);
    }

    #[test]
    fn sp_identity_and_scaling(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let theta = ParameterSet::init(ModelConfig::default(), seed).unwrap();
        let id = shrink_perturb(&theta, &SpParams::new(1.0, 0.0, seed).unwrap()).unwrap();
        prop_assert!(id.flatten().iter().zip(theta.flatten()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let scaled = shrink_perturb(&theta, &SpParams::new(lambda, 0.0, seed).unwrap()).unwrap();
        prop_assert!(scaled.flatten().iter().zip(theta.flatten()).all(|(a, b)| a.to_bits() == (lambda * b).to_bits()));
    }
}

/// At binary points the MVC loss is the cover size plus beta per uncovered
/// edge; checked on every graph and every assignment with n <= 5.
#[test]
fn mvc_loss_at_binary_points_exhaustive() {
    let beta = 0.7;
    let pr = Problem::mvc(beta).unwrap();
    for n in 1..=5usize {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        for emask in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(b, _)| emask >> b & 1 == 1)
                .map(|(_, &e)| e)
                .collect();
            let g = Graph::new(n, edges).unwrap();
            for xmask in 0u32..(1 << n) {
                let x: Vec<bool> = (0..n).map(|i| xmask >> i & 1 == 1).collect();
                let p: Vec<f64> = x.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                let uncovered = g.edges().iter().filter(|&&(i, j)| !x[i] && !x[j]).count();
                let size = x.iter().filter(|&&b| b).count();
                let loss = pr.value(&g, &p).unwrap();
                assert_eq!(loss, size as f64 + beta * uncovered as f64);
                assert_eq!(
                    evaluate(ProblemKind::Mvc, &g, &x).unwrap().feasible,
                    uncovered == 0
                );
            }
        }
    }
}

#[test]
fn best_so_far_is_monotone_in_reports() {
    let g = generate_rb(&RbParams {
        k: 5,
        a: 0.8,
        p: 0.3,
        rng_seed: 3,
    })
    .unwrap();
    let theta = ParameterSet::init(ModelConfig::default(), 8).unwrap();
    for kind in [ProblemKind::Mvc, ProblemKind::Mc] {
        let cfg = TuneConfig {
            problem: Problem::new(kind, 0.5).unwrap(),
            steps: 15,
            lr: 1e-2,
            seeds: 3,
            input_seed: 1,
            parallel: false,
            timing: false,
        };
        let curve = fine_tune(&theta, &g, &cfg).unwrap().best_so_far();
        assert_eq!(curve.len(), 16);
        for w in curve.windows(2) {
            assert!(!kind.better(w[0], w[1]), "{curve:?}");
        }
    }
}
